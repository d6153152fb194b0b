//! Identifiers, logical time and the commit-timestamp order shared by the
//! protocol, the abstract model and the checker.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Client (session) identifier. `ClientId(0)` is reserved for the writer of
/// the initial version of every key; real clients are numbered from 1.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub const INIT: ClientId = ClientId(0);

    pub fn is_init(self) -> bool {
        self == Self::INIT
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cl{}", self.0)
    }
}

/// Partition identifier.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "svr{}", self.0)
    }
}

/// Transaction identifier `(client, sequence number)`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TxnId {
    pub cl: ClientId,
    pub sn: u32,
}

impl TxnId {
    /// Writer of every key's initial version.
    pub const INIT: TxnId = TxnId {
        cl: ClientId::INIT,
        sn: 0,
    };

    pub fn new(cl: ClientId, sn: u32) -> Self {
        TxnId { cl, sn }
    }

    pub fn is_init(self) -> bool {
        self == Self::INIT
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_init() {
            write!(f, "T0")
        } else {
            write!(f, "t({},{})", self.cl.0, self.sn)
        }
    }
}

/// Lamport clock reading.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LamportTs(pub u64);

impl LamportTs {
    pub const ZERO: LamportTs = LamportTs(0);

    /// Clock value after receiving `received`: strictly above both inputs.
    pub fn advance(self, received: LamportTs) -> LamportTs {
        clock_advance(self, received)
    }
}

impl fmt::Display for LamportTs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Commit timestamp. The derived order is lexicographic: clock first, then
/// the writer's client id (lower id first).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct CommitTs {
    pub clock: LamportTs,
    pub cl: ClientId,
}

impl CommitTs {
    /// Commit timestamp of the initial versions.
    pub const INIT: CommitTs = CommitTs {
        clock: LamportTs(0),
        cl: ClientId::INIT,
    };

    pub fn new(clock: LamportTs, cl: ClientId) -> Self {
        CommitTs { clock, cl }
    }
}

impl fmt::Display for CommitTs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.clock.0, self.cl)
    }
}

/// Key index into a finite, configured keyspace.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Key(pub u32);

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Stored value. Values produced by the workload generator encode their
/// provenance `(client, sn, key)`; `Value::INIT` is the initial value of
/// every key.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Value(pub u64);

const KEY_BITS: u32 = 24;
const SN_BITS: u32 = 24;

impl Value {
    pub const INIT: Value = Value(0);

    /// Value written by transaction `(cl, sn)` to `key`.
    pub fn provenance(cl: ClientId, sn: u32, key: Key) -> Value {
        debug_assert!(key.0 < (1 << KEY_BITS) && sn < (1 << SN_BITS));
        Value(
            ((cl.0 as u64) << (KEY_BITS + SN_BITS))
                | ((sn as u64) << KEY_BITS)
                | key.0 as u64,
        )
    }

    /// Inverse of [`Value::provenance`]; `None` for the initial value.
    pub fn decode(self) -> Option<(TxnId, Key)> {
        let cl = (self.0 >> (KEY_BITS + SN_BITS)) as u32;
        if cl == 0 {
            return None;
        }
        let sn = ((self.0 >> KEY_BITS) & ((1 << SN_BITS) - 1)) as u32;
        let key = (self.0 & ((1 << KEY_BITS) - 1)) as u32;
        Some((TxnId::new(ClientId(cl), sn), Key(key)))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decode() {
            Some((t, k)) => write!(f, "v[{t}@{k}]"),
            None if self.0 == 0 => write!(f, "v0"),
            None => write!(f, "v{}", self.0),
        }
    }
}

pub fn commit_ts_cmp(a: &CommitTs, b: &CommitTs) -> std::cmp::Ordering {
    a.cmp(b)
}

/// Lamport receive rule: `max(local, received) + 1`.
pub fn clock_advance(local: LamportTs, received: LamportTs) -> LamportTs {
    LamportTs(local.0.max(received.0) + 1)
}

/// Session order: same client, smaller sequence number.
pub fn so_precedes(t1: TxnId, t2: TxnId) -> bool {
    t1.cl == t2.cl && t1.sn < t2.sn
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::cmp::Ordering;

    fn cts(clock: u64, cl: u32) -> CommitTs {
        CommitTs::new(LamportTs(clock), ClientId(cl))
    }

    #[test]
    fn commit_ts_examples() {
        assert_eq!(commit_ts_cmp(&cts(5, 1), &cts(5, 1)), Ordering::Equal);
        assert_eq!(commit_ts_cmp(&cts(3, 2), &cts(5, 1)), Ordering::Less);
        assert_eq!(commit_ts_cmp(&cts(5, 1), &cts(5, 2)), Ordering::Less);
    }

    #[test]
    fn commit_ts_total_on_small_grid() {
        // Reference: lexicographic comparison spelled out by hand.
        let reference = |a: (u64, u32), b: (u64, u32)| {
            if a.0 != b.0 {
                a.0.cmp(&b.0)
            } else {
                a.1.cmp(&b.1)
            }
        };
        let grid: Vec<(u64, u32)> = (0..2).flat_map(|c| (1..3).map(move |l| (c, l))).collect();
        for &a in &grid {
            for &b in &grid {
                let got = commit_ts_cmp(&cts(a.0, a.1), &cts(b.0, b.1));
                assert_eq!(got, reference(a, b));
                assert_eq!(got.reverse(), commit_ts_cmp(&cts(b.0, b.1), &cts(a.0, a.1)));
                assert_eq!(got == Ordering::Equal, a == b);
            }
        }
    }

    #[test]
    fn clock_advance_examples() {
        assert_eq!(clock_advance(LamportTs(0), LamportTs(0)), LamportTs(1));
        assert_eq!(clock_advance(LamportTs(7), LamportTs(3)), LamportTs(8));
        assert_eq!(clock_advance(LamportTs(2), LamportTs(9)), LamportTs(10));
    }

    #[test]
    fn so_examples() {
        let t = |c, s| TxnId::new(ClientId(c), s);
        assert!(so_precedes(t(1, 0), t(1, 1)));
        assert!(!so_precedes(t(1, 1), t(1, 0)));
        assert!(!so_precedes(t(1, 0), t(2, 1)));
    }

    #[test]
    fn provenance_roundtrip() {
        let v = Value::provenance(ClientId(8), 999, Key(9_999));
        assert_eq!(v.decode(), Some((TxnId::new(ClientId(8), 999), Key(9_999))));
        assert_eq!(Value::INIT.decode(), None);
    }

    proptest! {
        #[test]
        fn clock_advance_exceeds_both(a in 0u64..1 << 40, b in 0u64..1 << 40) {
            let r = clock_advance(LamportTs(a), LamportTs(b));
            prop_assert!(r > LamportTs(a) && r > LamportTs(b));
        }

        #[test]
        fn commit_ts_transitive(a in (0u64..4, 0u32..3), b in (0u64..4, 0u32..3), c in (0u64..4, 0u32..3)) {
            let (a, b, c) = (cts(a.0, a.1), cts(b.0, b.1), cts(c.0, c.1));
            if a <= b && b <= c {
                prop_assert!(a <= c);
            }
            let n = [a < b, a == b, a > b].iter().filter(|x| **x).count();
            prop_assert_eq!(n, 1);
        }

        #[test]
        fn so_is_strict_partial_order(c1 in 1u32..3, s1 in 0u32..4, c2 in 1u32..3, s2 in 0u32..4, s3 in 0u32..4) {
            let (t1, t2, t3) = (TxnId::new(ClientId(c1), s1), TxnId::new(ClientId(c2), s2), TxnId::new(ClientId(c2), s3));
            prop_assert!(!so_precedes(t1, t1));
            prop_assert!(!(so_precedes(t1, t2) && so_precedes(t2, t1)));
            if so_precedes(t1, t2) && so_precedes(t2, t3) {
                prop_assert!(so_precedes(t1, t3));
            }
            // total within a session
            if s2 != s3 {
                prop_assert!(so_precedes(t2, t3) || so_precedes(t3, t2));
            }
        }
    }
}
