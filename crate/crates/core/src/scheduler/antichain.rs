//! Partial solutions and their Pareto pruning.
//!
//! A label is dominated when another label at the same decision epoch (and
//! with the same running windows) has at least its reward and at least its
//! charge in both wells, and is strictly better somewhere. Because the
//! battery model is monotone in its state, a dominated label can never lead
//! to a better completion than its dominator.

use std::cmp::Ordering;

use crate::battery::{KibamState, CHARGE_EPS};

/// Index into the choice arena; `NO_CHOICE` terminates a chain.
pub type ChoiceRef = u32;
pub const NO_CHOICE: ChoiceRef = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpLabel {
    pub reward: f64,
    pub state: KibamState,
    /// Most recent chosen window, linked back through the arena.
    pub chosen: ChoiceRef,
}

/// `l1` is at least as good as `l2` everywhere and strictly better somewhere.
/// Charges are compared with [`CHARGE_EPS`] slack.
pub fn dominates(l1: &DpLabel, l2: &DpLabel) -> bool {
    let (a1, b1) = (l1.state.available, l1.state.bound);
    let (a2, b2) = (l2.state.available, l2.state.bound);
    let weakly = l1.reward >= l2.reward && a1 >= a2 - CHARGE_EPS && b1 >= b2 - CHARGE_EPS;
    let strictly = l1.reward > l2.reward || a1 > a2 + CHARGE_EPS || b1 > b2 + CHARGE_EPS;
    weakly && strictly
}

/// Same reward and charges within the dominance slack.
pub fn equivalent(l1: &DpLabel, l2: &DpLabel) -> bool {
    l1.reward == l2.reward
        && (l1.state.available - l2.state.available).abs() <= CHARGE_EPS
        && (l1.state.bound - l2.state.bound).abs() <= CHARGE_EPS
}

/// Set of mutually non-dominated labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Antichain {
    labels: Vec<DpLabel>,
}

impl Antichain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[DpLabel] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<DpLabel> {
        self.labels
    }

    /// Inserts `label` unless something dominates it, evicting everything it
    /// dominates. Between equivalent labels the incumbent stays.
    pub fn insert(&mut self, label: DpLabel) -> bool {
        self.insert_with(label, |_, _| Ordering::Greater)
    }

    /// Like [`Antichain::insert`]; `prefer(new, old)` decides between
    /// equivalent labels (`Less` keeps `new`).
    pub fn insert_with<F>(&mut self, label: DpLabel, mut prefer: F) -> bool
    where
        F: FnMut(&DpLabel, &DpLabel) -> Ordering,
    {
        let mut replace = None;
        for (i, old) in self.labels.iter().enumerate() {
            if dominates(old, &label) {
                return false;
            }
            if equivalent(old, &label) {
                if prefer(&label, old) == Ordering::Less {
                    replace = Some(i);
                    break;
                }
                return false;
            }
        }
        if let Some(i) = replace {
            self.labels.swap_remove(i);
        }
        self.labels.retain(|old| !dominates(&label, old));
        self.labels.push(label);
        true
    }

    /// Appends without any dominance check; used when pruning is disabled,
    /// after which the set is no longer an antichain.
    pub(crate) fn push_unpruned(&mut self, label: DpLabel) {
        self.labels.push(label);
    }

    /// Drops labels until at most `cap` remain.
    ///
    /// Labels are ranked by their Pareto layer in (reward, total charge),
    /// then by reward. The first layer is the frontier obtained when the
    /// split between the wells is ignored, so a small cap still keeps the
    /// best reward reachable at every charge level. Returns whether any
    /// label was dropped.
    pub fn truncate(&mut self, cap: usize) -> bool {
        if self.labels.len() <= cap {
            return false;
        }
        self.labels.sort_by(|x, y| {
            y.reward
                .total_cmp(&x.reward)
                .then(y.state.total().total_cmp(&x.state.total()))
        });
        // tails[j]: highest total charge placed in layer j so far; decreasing in j.
        let mut tails: Vec<f64> = Vec::new();
        let mut layered: Vec<(usize, usize)> = Vec::with_capacity(self.labels.len());
        for (i, l) in self.labels.iter().enumerate() {
            let total = l.state.total();
            let j = tails.partition_point(|&t| t >= total);
            if j == tails.len() {
                tails.push(total);
            } else {
                tails[j] = total;
            }
            layered.push((j, i));
        }
        layered.sort_by_key(|&(j, i)| (j, i));
        let keep: Vec<DpLabel> = layered
            .into_iter()
            .take(cap)
            .map(|(_, i)| self.labels[i])
            .collect();
        self.labels = keep;
        true
    }
}

/// Returns `antichain` with `label` inserted under the pruning rule.
pub fn insert_pruned(mut antichain: Antichain, label: DpLabel) -> Antichain {
    antichain.insert(label);
    antichain
}
