//! Segmentation lattices over a single string.
//!
//! Nodes are character boundaries `0..=len`; an edge `(start, end, piece)`
//! exists for every inventory piece equal to the substring between the two
//! boundaries. All scores are base-2 log-probabilities.

/// Base-2 log-sum-exp of two values.
pub fn log2_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp2().ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub start: usize,
    pub end: usize,
    /// Index into the piece inventory the lattice was built from.
    pub piece: u32,
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentationLattice {
    len: usize,
    edges: Vec<Edge>,
    by_start: Vec<Vec<usize>>,
    by_end: Vec<Vec<usize>>,
}

/// A best path: the piece indices in order and the path's log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub pieces: Vec<u32>,
    pub lengths: Vec<usize>,
    pub log_prob: f64,
}

impl SegmentationLattice {
    /// Builds the lattice of `text`, matching substrings of at most
    /// `max_piece_len` characters through `lookup`.
    pub fn new<F>(text: &str, max_piece_len: usize, lookup: F) -> Self
    where
        F: Fn(&str) -> Option<(u32, f64)>,
    {
        let offsets: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let len = offsets.len() - 1;
        let mut lattice = SegmentationLattice {
            len,
            edges: Vec::new(),
            by_start: vec![Vec::new(); len + 1],
            by_end: vec![Vec::new(); len + 1],
        };
        for start in 0..len {
            for end in start + 1..=(start + max_piece_len).min(len) {
                if let Some((piece, log_prob)) = lookup(&text[offsets[start]..offsets[end]]) {
                    lattice.push(Edge {
                        start,
                        end,
                        piece,
                        log_prob,
                    });
                }
            }
        }
        lattice
    }

    /// Builds a lattice from explicit edges, for tests and oracles.
    pub fn from_edges(len: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut lattice = SegmentationLattice {
            len,
            edges: Vec::new(),
            by_start: vec![Vec::new(); len + 1],
            by_end: vec![Vec::new(); len + 1],
        };
        for edge in edges {
            assert!(edge.start < edge.end && edge.end <= len);
            lattice.push(edge);
        }
        lattice
    }

    fn push(&mut self, edge: Edge) {
        let i = self.edges.len();
        self.by_start[edge.start].push(i);
        self.by_end[edge.end].push(i);
        self.edges.push(edge);
    }

    /// Number of characters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `alpha[i]`: log total probability of all segmentations of the prefix
    /// ending at boundary `i`.
    pub fn forward(&self) -> Vec<f64> {
        let mut alpha = vec![f64::NEG_INFINITY; self.len + 1];
        alpha[0] = 0.0;
        for end in 1..=self.len {
            let mut acc = f64::NEG_INFINITY;
            for &e in &self.by_end[end] {
                let edge = &self.edges[e];
                acc = log2_add(acc, alpha[edge.start] + edge.log_prob);
            }
            alpha[end] = acc;
        }
        alpha
    }

    /// `beta[i]`: log total probability of all segmentations of the suffix
    /// starting at boundary `i`.
    pub fn backward(&self) -> Vec<f64> {
        let mut beta = vec![f64::NEG_INFINITY; self.len + 1];
        beta[self.len] = 0.0;
        for start in (0..self.len).rev() {
            let mut acc = f64::NEG_INFINITY;
            for &e in &self.by_start[start] {
                let edge = &self.edges[e];
                acc = log2_add(acc, edge.log_prob + beta[edge.end]);
            }
            beta[start] = acc;
        }
        beta
    }

    /// First boundary that cannot be reached from the start, if any.
    pub fn first_unreachable(&self) -> Option<usize> {
        let alpha = self.forward();
        alpha.iter().position(|a| *a == f64::NEG_INFINITY)
    }

    /// Marginal log-likelihood and the posterior probability of every edge,
    /// or `None` when the end is unreachable.
    pub fn marginals(&self) -> Option<(f64, Vec<f64>)> {
        let alpha = self.forward();
        let z = alpha[self.len];
        if z == f64::NEG_INFINITY {
            return None;
        }
        let beta = self.backward();
        let posteriors = self
            .edges
            .iter()
            .map(|e| (alpha[e.start] + e.log_prob + beta[e.end] - z).exp2())
            .collect();
        Some((z, posteriors))
    }

    /// Maximum-probability segmentation. Ties go to fewer pieces, then to the
    /// path whose piece lengths are lexicographically largest (leftmost
    /// longest). The path score is accumulated right to left.
    pub fn viterbi(&self) -> Option<Path> {
        #[derive(Clone, Copy)]
        struct Best {
            score: f64,
            tokens: usize,
            edge: usize,
        }
        let mut best: Vec<Option<Best>> = vec![None; self.len + 1];
        best[self.len] = Some(Best {
            score: 0.0,
            tokens: 0,
            edge: usize::MAX,
        });
        for start in (0..self.len).rev() {
            let mut current: Option<Best> = None;
            for &e in &self.by_start[start] {
                let edge = &self.edges[e];
                let Some(next) = best[edge.end] else { continue };
                let cand = Best {
                    score: edge.log_prob + next.score,
                    tokens: next.tokens + 1,
                    edge: e,
                };
                let better = match current {
                    None => true,
                    Some(cur) => {
                        cand.score > cur.score
                            || (cand.score == cur.score
                                && (cand.tokens < cur.tokens
                                    || (cand.tokens == cur.tokens && edge.end > self.edges[cur.edge].end)))
                    }
                };
                if better {
                    current = Some(cand);
                }
            }
            best[start] = current;
        }
        let head = best[0]?;
        let mut pieces = Vec::with_capacity(head.tokens);
        let mut lengths = Vec::with_capacity(head.tokens);
        let mut pos = 0;
        while pos < self.len {
            let edge = &self.edges[best[pos].expect("reachable").edge];
            pieces.push(edge.piece);
            lengths.push(edge.end - edge.start);
            pos = edge.end;
        }
        Some(Path {
            pieces,
            lengths,
            log_prob: head.score,
        })
    }
}
