//! Data-parallel helpers. With the `parallel` feature (default) work is
//! spread over the rayon pool; without it the same closures run
//! sequentially. Outputs keep input order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to consecutive chunks of `items` and concatenates the results.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Vec<R> + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk).flat_map_iter(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_chunks_seq(items, chunk, f)
    }
}

/// [`map_chunks`] on the calling thread regardless of features.
pub fn map_chunks_seq<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    F: Fn(&[T]) -> Vec<R>,
{
    items.chunks(chunk.max(1)).flat_map(f).collect()
}

/// Maps every element independently.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let v: Vec<u32> = (0..1000).collect();
        let out = map_chunks(&v, 7, |c| c.iter().map(|x| x * 2).collect());
        assert_eq!(out, v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_chunks_seq(&v, 7, |c| c.iter().map(|x| x * 2).collect()), out);
        assert_eq!(map(&v, |x| x + 1)[999], 1000);
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
