//! Transport framing around protocol payloads.
//!
//! ```text
//! 0x4C 0x50 | version u8 | length u16 BE | payload | CRC-32 BE
//! ```
//!
//! The CRC covers the header and the payload.

use std::io::Read;

pub const FRAME_MAGIC: [u8; 2] = [0x4C, 0x50];
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 5;
pub const TRAILER_LEN: usize = 4;
pub const FRAME_OVERHEAD: usize = HEADER_LEN + TRAILER_LEN;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    Magic([u8; 2]),
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("frame length field {declared} but {actual} payload bytes")]
    Length { declared: usize, actual: usize },
    #[error("frame checksum mismatch")]
    Crc,
    #[error("payload of {0} bytes does not fit a frame")]
    TooLarge(usize),
}

pub fn encode_frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    let len = u16::try_from(payload.len()).map_err(|_| FrameError::TooLarge(payload.len()))?;
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

fn check_header(h: &[u8]) -> Result<usize, FrameError> {
    let magic = [h[0], h[1]];
    if magic != FRAME_MAGIC {
        return Err(FrameError::Magic(magic));
    }
    if h[2] != FRAME_VERSION {
        return Err(FrameError::Version(h[2]));
    }
    Ok(u16::from_be_bytes([h[3], h[4]]) as usize)
}

/// Decodes exactly one complete frame.
pub fn decode_frame(frame: &[u8]) -> Result<Vec<u8>, FrameError> {
    if frame.len() < FRAME_OVERHEAD {
        return Err(FrameError::Length {
            declared: 0,
            actual: frame.len().saturating_sub(FRAME_OVERHEAD),
        });
    }
    let declared = check_header(&frame[..HEADER_LEN])?;
    let actual = frame.len() - FRAME_OVERHEAD;
    if declared != actual {
        return Err(FrameError::Length { declared, actual });
    }
    let (body, crc) = frame.split_at(frame.len() - TRAILER_LEN);
    if crc32fast::hash(body) != u32::from_be_bytes(crc.try_into().expect("4 bytes")) {
        return Err(FrameError::Crc);
    }
    Ok(body[HEADER_LEN..].to_vec())
}

#[derive(Debug, thiserror::Error)]
pub enum ReadFrameError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads one frame from a byte stream.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, ReadFrameError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = check_header(&header)?;
    let mut rest = vec![0u8; len + TRAILER_LEN];
    r.read_exact(&mut rest)?;
    let mut frame = header.to_vec();
    frame.extend_from_slice(&rest);
    Ok(decode_frame(&frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let f = encode_frame(&[0x01, 0x07]).unwrap();
        assert_eq!(&f[..5], &[0x4C, 0x50, 0x01, 0x00, 0x02]);
        assert_eq!(f.len(), 2 + FRAME_OVERHEAD);
        assert_eq!(decode_frame(&f).unwrap(), vec![0x01, 0x07]);
        assert_eq!(read_frame(&mut f.as_slice()).unwrap(), vec![0x01, 0x07]);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let payload: Vec<u8> = (0..17u8).map(|i| i.wrapping_mul(37)).collect();
        let f = encode_frame(&payload).unwrap();
        for bit in 0..f.len() * 8 {
            let mut g = f.clone();
            g[bit / 8] ^= 1 << (bit % 8);
            assert!(decode_frame(&g).is_err(), "flip of bit {bit} accepted");
        }
    }

    #[test]
    fn malformed_frames() {
        assert!(matches!(decode_frame(&[0; 3]), Err(FrameError::Length { .. })));
        let mut f = encode_frame(&[9]).unwrap();
        f[2] = 2;
        assert_eq!(decode_frame(&f), Err(FrameError::Version(2)));
        assert!(encode_frame(&vec![0; 70_000]).is_err());
    }
}
