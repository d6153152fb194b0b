use super::{Verdict, Violation};
use crate::error::HistoryError;
use crate::history::History;

const MAX_RECHECKS: usize = 1000;

/// Shrink `h` while `check` keeps reporting a violation of the same check
/// and guard: first cut everything after the offending events, then drop
/// chunks of events greedily, halving the chunk size, for at most 1000
/// re-checks.
pub fn minimize_witness<F>(h: &History, v: &Violation, check: F) -> History
where
    F: Fn(&History) -> Result<Verdict, HistoryError>,
{
    let budget = std::cell::Cell::new(MAX_RECHECKS);
    let same = |cand: &History| {
        budget.set(budget.get().saturating_sub(1));
        matches!(check(cand), Ok(Verdict::Fail(x)) if x.check == v.check && x.guard == v.guard)
    };
    let mut cur = h.clone();
    if let Some(&last) = v.events.iter().max() {
        let prefix = h.filtered(|i| h.records[i].seq <= last);
        if prefix.len() < h.len() && same(&prefix) {
            cur = prefix;
        }
    }
    let mut chunk = cur.len().div_ceil(2);
    while chunk >= 1 {
        let mut i = 0;
        while i < cur.len() {
            if budget.get() == 0 {
                return cur;
            }
            let cand = cur.filtered(|j| j < i || j >= i + chunk);
            if same(&cand) {
                cur = cand;
            } else {
                i += chunk;
            }
        }
        if chunk == 1 {
            break;
        }
        chunk = chunk.div_ceil(2).min(chunk - 1);
    }
    cur
}
