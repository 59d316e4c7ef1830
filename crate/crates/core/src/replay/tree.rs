//! Lazy k-ary checkpoint tree over the states of a training run.
//!
//! The `n` states are the leaves of a k-ary tree padded to `k^L` leaves.
//! Visiting a node replays training from its first state to produce the
//! first state of each child; children are then visited last to first, and
//! each child's state is freed once its subtree is done. Leaves therefore
//! come out in decreasing index order while only `O(k log_k n)` states are
//! held at once.

use std::collections::HashMap;

use super::store::{Checkpointable, SpillConfig, StateStore};
use crate::error::{Error, Result};

/// `ceil(log_k n)`, the depth of the padded tree.
pub fn tree_depth(n: usize, k: usize) -> usize {
    let mut depth = 0;
    let mut cap = 1usize;
    while cap < n {
        cap = cap.saturating_mul(k);
        depth += 1;
    }
    depth
}

/// Maximum number of simultaneously stored states.
pub fn live_bound(n: usize, k: usize) -> usize {
    k * tree_depth(n, k) + k
}

/// Maximum number of re-executed steps over a full traversal.
pub fn replay_bound(n: usize, k: usize) -> usize {
    n * tree_depth(n, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TreeStats {
    pub live: usize,
    pub peak_live: usize,
    /// Steps run while populating the root's children.
    pub forward_steps: usize,
    /// Steps re-run below the root.
    pub replayed_steps: usize,
}

#[derive(Debug)]
struct Frame {
    start: usize,
    span: usize,
    /// Next child to visit; children are visited from last to first.
    next: Option<usize>,
    expanded: bool,
    /// Whether this node owns its start state (true for every child but
    /// the first).
    owns_start: bool,
}

/// Reverse in-order traversal yielding `(index, state)` for
/// `index = n-1, ..., 0`.
pub struct CheckpointTree<S, F> {
    k: usize,
    n: usize,
    store: StateStore<S>,
    stack: Vec<Frame>,
    replayer: F,
    digests: Option<HashMap<usize, [u8; 32]>>,
    stats: TreeStats,
    bound: usize,
    stored_at_last_yield: Vec<usize>,
    failed: bool,
}

impl<S, F> CheckpointTree<S, F>
where
    S: Checkpointable,
    F: FnMut(&S, usize) -> Result<S>,
{
    /// `replayer(s_i, i)` must return `s_{i+1}` deterministically. With
    /// `verify`, every recomputed state is checked against the digest of
    /// its first computation.
    pub fn new(n: usize, k: usize, s0: S, replayer: F, verify: bool, spill: Option<SpillConfig>) -> Result<Self> {
        if k < 2 {
            return Err(Error::config(format!("tree arity must be >= 2, got {k}")));
        }
        if n == 0 {
            return Err(Error::config("a traversal needs at least one state"));
        }
        let depth = tree_depth(n, k);
        let span = k.checked_pow(depth as u32).ok_or_else(|| Error::config("tree too large"))?;
        let mut store = StateStore::new(spill)?;
        let mut digests = verify.then(HashMap::new);
        if let Some(d) = digests.as_mut() {
            d.insert(0, s0.digest());
        }
        store.insert(0, s0)?;
        let stats = TreeStats { live: 1, peak_live: 1, ..Default::default() };
        Ok(CheckpointTree {
            k,
            n,
            store,
            stack: vec![Frame { start: 0, span, next: None, expanded: false, owns_start: true }],
            replayer,
            digests,
            stats,
            bound: live_bound(n, k),
            stored_at_last_yield: Vec::new(),
            failed: false,
        })
    }

    pub fn stats(&self) -> TreeStats {
        self.stats
    }

    /// Stored indices at the moment the most recent state was yielded.
    pub fn stored_at_last_yield(&self) -> &[usize] {
        &self.stored_at_last_yield
    }

    fn note_live(&mut self) -> Result<()> {
        self.stats.live = self.store.len();
        self.stats.peak_live = self.stats.peak_live.max(self.stats.live);
        if self.stats.live > self.bound {
            return Err(Error::StorageBound { live: self.stats.live, bound: self.bound });
        }
        Ok(())
    }

    fn check(&mut self, index: usize, state: &S) -> Result<()> {
        if let Some(d) = self.digests.as_mut() {
            let digest = state.digest();
            match d.get(&index) {
                Some(prev) if *prev != digest => return Err(Error::Determinism { index }),
                Some(_) => {}
                None => {
                    d.insert(index, digest);
                }
            }
        }
        Ok(())
    }

    // Replays from `start` and stores the first state of every child but
    // the first. Returns the index of the last child that exists.
    fn expand(&mut self, start: usize, span: usize, root: bool) -> Result<usize> {
        let child = span / self.k;
        let last = (self.k - 1).min((self.n - 1 - start) / child);
        if last == 0 {
            return Ok(0);
        }
        let mut state = self.store.get(start)?.expect("node start is stored");
        let mut at = start;
        for j in 1..=last {
            let target = start + j * child;
            while at < target {
                state = (self.replayer)(&state, at)?;
                at += 1;
                if root {
                    self.stats.forward_steps += 1;
                } else {
                    self.stats.replayed_steps += 1;
                }
                self.check(at, &state)?;
            }
            self.store.insert(target, state.clone())?;
            self.note_live()?;
        }
        Ok(last)
    }

    fn advance(&mut self) -> Result<Option<(usize, S)>> {
        loop {
            let Some(top) = self.stack.last_mut() else {
                return Ok(None);
            };
            let (start, span, owns) = (top.start, top.span, top.owns_start);
            if span == 1 {
                self.stack.pop();
                self.stored_at_last_yield = self.store.indices();
                let state = if owns && start != 0 {
                    let s = self.store.remove(start)?;
                    self.stats.live = self.store.len();
                    s
                } else {
                    self.store.get(start)?
                };
                return Ok(Some((start, state.expect("leaf state is stored"))));
            }
            if !top.expanded {
                let root = self.stack.len() == 1;
                let last = self.expand(start, span, root)?;
                let top = self.stack.last_mut().expect("frame present");
                top.expanded = true;
                top.next = Some(last);
                continue;
            }
            match top.next {
                Some(j) => {
                    top.next = j.checked_sub(1);
                    let child = span / self.k;
                    self.stack.push(Frame {
                        start: start + j * child,
                        span: child,
                        next: None,
                        expanded: false,
                        owns_start: j > 0,
                    });
                }
                None => {
                    self.stack.pop();
                    if owns && start != 0 {
                        self.store.remove(start)?;
                        self.stats.live = self.store.len();
                    }
                }
            }
        }
    }
}

impl<S, F> Iterator for CheckpointTree<S, F>
where
    S: Checkpointable,
    F: FnMut(&S, usize) -> Result<S>,
{
    type Item = Result<(usize, S)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.advance() {
            Ok(Some(x)) => Some(Ok(x)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}
