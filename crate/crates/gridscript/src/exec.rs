//! Execution-mode switch for the data-parallel sections.
//!
//! Episode generation, batch encoding, and evaluation are independent per
//! item; `map_items` fans them out with rayon when the `parallel` feature
//! is enabled and the mode asks for it. Results are collected in input
//! order and reduced sequentially by callers, so both modes produce
//! bit-identical output.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn parse(s: &str) -> Option<ExecMode> {
        match s {
            "sequential" => Some(ExecMode::Sequential),
            "parallel" => Some(ExecMode::Parallel),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExecMode::Sequential => "sequential",
            ExecMode::Parallel => "parallel",
        }
    }
}

/// Apply `f` to every item, preserving input order in the output. With the
/// `parallel` feature off, `Parallel` silently degrades to sequential.
pub fn map_items<T, U, F>(mode: ExecMode, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.into_iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.into_iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_items(ExecMode::Sequential, items.clone(), |x| x * x + 1);
        let par = map_items(ExecMode::Parallel, items, |x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[3], 10);
    }
}
