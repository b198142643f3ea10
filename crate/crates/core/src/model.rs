//! The matrix-factorization scoring model: per-id context and item
//! embeddings, exact ranking, brute-force top-n retrieval, least-squares
//! fold-in of new contexts, and a binary file format.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

const MAGIC: &[u8] = b"IMFR1\n";

/// Matrix factorization model: context embeddings W (|C| x d) and item
/// embeddings H (|I| x d); the score of a pair is the dot product of
/// its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    d: usize,
    w: Matrix,
    h: Matrix,
}

/// Items sorted by non-increasing score, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Ordering used everywhere ranking matters: descending score, ties
/// broken toward the smaller item id.
fn score_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

impl FactorModel {
    /// Entries drawn i.i.d. Normal(0, sigma^2) from a generator seeded
    /// with `seed`; sigma = 0 yields the all-zeros model.
    pub fn init(
        num_contexts: usize,
        num_items: usize,
        d: usize,
        seed: u64,
        sigma: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        if sigma < 0.0 {
            return Err(Error::invalid("init sigma must be >= 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Matrix::zeros(num_contexts, d);
        let mut h = Matrix::zeros(num_items, d);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma validated above");
            for x in w.data_mut() {
                *x = normal.sample(&mut rng);
            }
            for x in h.data_mut() {
                *x = normal.sample(&mut rng);
            }
        }
        Ok(FactorModel { d, w, h })
    }

    /// Default initialization scale, keeping initial scores around 0.01.
    pub fn default_sigma(d: usize) -> f64 {
        0.1 / (d as f64).sqrt()
    }

    pub fn from_matrices(w: Matrix, h: Matrix) -> Result<Self> {
        if w.cols() != h.cols() || w.cols() == 0 {
            return Err(Error::invalid(
                "embedding matrices must share a dimension >= 1",
            ));
        }
        Ok(FactorModel { d: w.cols(), w, h })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_contexts(&self) -> usize {
        self.w.rows()
    }

    pub fn num_items(&self) -> usize {
        self.h.rows()
    }

    pub fn context_embedding(&self, c: usize) -> &[f64] {
        self.w.row(c)
    }

    pub fn item_embedding(&self, i: usize) -> &[f64] {
        self.h.row(i)
    }

    pub fn context_embedding_mut(&mut self, c: usize) -> &mut [f64] {
        self.w.row_mut(c)
    }

    pub fn item_embedding_mut(&mut self, i: usize) -> &mut [f64] {
        self.h.row_mut(i)
    }

    pub fn contexts(&self) -> &Matrix {
        &self.w
    }

    pub fn items(&self) -> &Matrix {
        &self.h
    }

    pub fn items_mut(&mut self) -> &mut Matrix {
        &mut self.h
    }

    /// lambda * ||theta||^2 building block: squared Frobenius norm of
    /// all parameters.
    pub fn param_sq_norm(&self) -> f64 {
        self.w.frob_dot(&self.w) + self.h.frob_dot(&self.h)
    }

    pub fn score(&self, c: usize, i: usize) -> f64 {
        linalg::dot(self.w.row(c), self.h.row(i))
    }

    pub fn score_with(&self, context_embedding: &[f64], i: usize) -> f64 {
        linalg::dot(context_embedding, self.h.row(i))
    }

    /// All |I| scores for one context.
    pub fn score_all(&self, c: usize) -> Vec<f64> {
        let wc = self.w.row(c);
        (0..self.h.rows())
            .map(|i| linalg::dot(wc, self.h.row(i)))
            .collect()
    }

    /// 1-based rank of `i` among the non-excluded items.
    pub fn rank_of(&self, c: usize, i: usize, excluded: &HashSet<usize>) -> Result<usize> {
        if excluded.contains(&i) {
            return Err(Error::invalid(format!("item {i} is excluded from ranking")));
        }
        let target = (self.score(c, i), i);
        let wc = self.w.row(c);
        let mut rank = 1usize;
        for j in 0..self.h.rows() {
            if j == i || excluded.contains(&j) {
                continue;
            }
            let cand = (linalg::dot(wc, self.h.row(j)), j);
            if score_order(cand, target) == Ordering::Less {
                rank += 1;
            }
        }
        Ok(rank)
    }

    /// Top-n retrieval via a bounded min-heap: O(|I| log n), equal to
    /// full-sort truncation under the tie rule.
    pub fn top_n(&self, c: usize, n: usize, excluded: &HashSet<usize>) -> Result<RankedList> {
        if n == 0 {
            return Err(Error::invalid("top_n requires n >= 1"));
        }
        let wc = self.w.row(c);
        // Max-heap of HeapEntry keeps the current worst on top.
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(n + 1);
        for i in 0..self.h.rows() {
            if excluded.contains(&i) {
                continue;
            }
            let entry = HeapEntry {
                score: linalg::dot(wc, self.h.row(i)),
                item: i,
            };
            if heap.len() < n {
                heap.push(entry);
            } else if let Some(worst) = heap.peek() {
                if entry.cmp(worst) == Ordering::Less {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
        // Ascending in the best-first order, i.e. rank order.
        let entries = heap.into_sorted_vec();
        Ok(RankedList {
            items: entries.iter().map(|e| e.item).collect(),
            scores: entries.iter().map(|e| e.score).collect(),
        })
    }

    /// Fold in a new context from its interaction history by solving the
    /// regularized least-squares block
    /// (sum alpha h h^t + alpha0 G^I + lambda I)^-1 (sum alpha y h).
    pub fn fold_in_context(
        &self,
        history: &[(usize, f64, f64)],
        alpha0: f64,
        lambda: f64,
        gram_item: &Matrix,
    ) -> Result<Vec<f64>> {
        let d = self.d;
        let mut a = Matrix::zeros(d, d);
        a.add_assign(gram_item, alpha0);
        for r in 0..d {
            let v = a.get(r, r) + lambda;
            a.set(r, r, v);
        }
        let mut b = vec![0.0; d];
        for &(item, alpha, label) in history {
            if item >= self.num_items() {
                return Err(Error::invalid(format!("history item {item} out of range")));
            }
            let h = self.h.row(item);
            a.add_outer(h, alpha);
            linalg::axpy(&mut b, alpha * label, h);
        }
        if history.is_empty() && alpha0 == 0.0 && lambda == 0.0 {
            return Err(Error::invalid(
                "fold-in with empty history needs lambda > 0 or alpha0 > 0",
            ));
        }
        linalg::solve_spd(&mut a, &b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC)?;
        writeln!(out, "{} {} {}", self.w.rows(), self.h.rows(), self.d)?;
        for &v in self.w.data().iter().chain(self.h.data()) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.as_ref().display())))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 6];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for magic string".into()))?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic string".into()));
        }
        let mut header = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            input
                .read_exact(&mut byte)
                .map_err(|_| Error::Format("truncated header".into()))?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
            if header.len() > 128 {
                return Err(Error::Format("header line too long".into()));
            }
        }
        let header =
            String::from_utf8(header).map_err(|_| Error::Format("header is not ASCII".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad header {header:?}")))?;
        if dims.len() != 3 {
            return Err(Error::Format(format!("bad header {header:?}")));
        }
        let (nc, ni, d) = (dims[0], dims[1], dims[2]);
        if d == 0 {
            return Err(Error::Format("embedding dimension 0 in header".into()));
        }
        let total = (nc + ni) * d;
        let mut data = vec![0.0f64; total];
        let mut offset = MAGIC.len() + header.len() + 1;
        for v in data.iter_mut() {
            let mut buf = [0u8; 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("truncated payload at byte offset {offset}")))?;
            *v = f64::from_le_bytes(buf);
            offset += 8;
        }
        let h_data = data.split_off(nc * d);
        FactorModel::from_matrices(
            Matrix::from_vec(nc, d, data),
            Matrix::from_vec(ni, d, h_data),
        )
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    score: f64,
    item: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    // score_order is best-first (Less = better), so BinaryHeap's max is
    // the worst retained candidate, ready for eviction.
    fn cmp(&self, other: &Self) -> Ordering {
        score_order((self.score, self.item), (other.score, other.item))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
