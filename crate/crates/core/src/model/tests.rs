use super::*;
use proptest::prelude::*;

fn t(c: u32, s: u32) -> TxnId {
    TxnId::new(ClientId(c), s)
}

fn view(entries: &[(u32, &[usize])]) -> View {
    let mut u = View::init();
    for &(k, idx) in entries {
        u.set(Key(k), idx.iter().copied().collect());
    }
    u
}

/// Naive transitive closure over dense node indices.
fn closure_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for m in 0..n {
        for a in 0..n {
            for b in 0..n {
                if r[a][m] && r[m][b] {
                    r[a][b] = true;
                }
            }
        }
    }
    r
}

#[test]
fn vis_tx_examples() {
    let mut k = AbstractKvs::new();
    assert_eq!(vis_tx(&k, &View::init()), BTreeSet::from([TxnId::INIT]));
    k.append(Key(0), Value(1), t(1, 0));
    assert_eq!(vis_tx(&k, &view(&[(0, &[0, 1])])), BTreeSet::from([TxnId::INIT, t(1, 0)]));
}

#[test]
fn closed_without_dependencies() {
    let mut k = AbstractKvs::new();
    k.append(Key(0), Value(1), t(1, 0));
    assert!(closed(&k, &view(&[(0, &[0, 1])]), &[], &[]));
    assert!(closed(&k, &View::init(), &[], &[]));
}

#[test]
fn closed_rejects_missing_session_predecessor() {
    // t(1,0) writes k0, t(1,1) writes k1; the view sees only the second.
    let mut k = AbstractKvs::new();
    k.append(Key(0), Value(1), t(1, 0));
    k.append(Key(1), Value(2), t(1, 1));
    let so = [(t(1, 0), t(1, 1))];
    let u = view(&[(1, &[0, 1])]);
    assert!(!closed(&k, &u, &so, &[]));
    assert_eq!(
        closure_violation(&k, &u, &DepGraph::from_relations(&so, &[])),
        Some((t(1, 0), t(1, 1)))
    );
    // Oracle on the same 3-node graph: T0=0, t(1,0)=1, t(1,1)=2.
    let r = closure_oracle(3, &[(1, 2)]);
    let vis = [true, false, true];
    assert!((0..3).any(|p| r[p][2] && !vis[p]));
    assert!(closed(&k, &view(&[(0, &[0, 1]), (1, &[0, 1])]), &so, &[]));
}

#[test]
fn read_only_predecessors_are_exempt() {
    // t(1,0) reads, then t(1,1) writes; seeing the write needs nothing else.
    let mut k = AbstractKvs::new();
    k.add_reader(Key(0), 0, t(1, 0));
    k.append(Key(1), Value(2), t(1, 1));
    let so = [(t(1, 0), t(1, 1))];
    assert!(closed(&k, &view(&[(1, &[0, 1])]), &so, &[]));
}

#[test]
fn causality_through_read_only_transaction() {
    // t(2,0) writes k0; t(1,0) reads it; t(1,1) writes k1. Seeing t(1,1)
    // requires seeing t(2,0).
    let mut k = AbstractKvs::new();
    let i = k.append(Key(0), Value(5), t(2, 0));
    k.add_reader(Key(0), i, t(1, 0));
    k.append(Key(1), Value(6), t(1, 1));
    let so = [(t(1, 0), t(1, 1))];
    let wr = [(t(2, 0), t(1, 0))];
    assert!(!closed(&k, &view(&[(1, &[0, 1])]), &so, &wr));
    assert!(closed(&k, &view(&[(0, &[0, 1]), (1, &[0, 1])]), &so, &wr));
}

#[test]
fn lww_examples() {
    let mut k = AbstractKvs::new();
    assert!(lww_read_ok(&k, &View::init(), &Fingerprint::new().read(Key(0), Value::INIT)));
    k.append(Key(0), Value(1), t(1, 0));
    k.append(Key(0), Value(2), t(2, 0));
    let u = view(&[(0, &[0, 2])]);
    assert!(!lww_read_ok(&k, &u, &Fingerprint::new().read(Key(0), Value(1))));
    assert!(lww_read_ok(&k, &u, &Fingerprint::new().read(Key(0), Value(2))));
    assert!(lww_read_ok(&k, &u, &Fingerprint::new().write(Key(0), Value(9))));
}

#[test]
fn wellformedness() {
    let mut k = AbstractKvs::new();
    k.append(Key(0), Value(1), t(1, 0));
    k.append(Key(1), Value(1), t(1, 0));
    assert!(wellformed(&k, &view(&[(0, &[0, 1]), (1, &[0, 1])])));
    assert!(!wellformed(&k, &view(&[(0, &[0, 1])])), "fractured");
    assert!(!wellformed(&k, &view(&[(0, &[1]), (1, &[0, 1])])), "missing init");
    assert!(!wellformed(&k, &view(&[(0, &[0, 2])])), "out of range");
}

fn commit(cfg: &AbstractConfig, cl: u32, sn: u32, u: &View, u2: &View, f: &Fingerprint) -> Result<AbstractConfig, Rejection> {
    let so: Vec<(TxnId, TxnId)> = (1..=sn).map(|s| (t(cl, s - 1), t(cl, s))).collect();
    commit_step(cfg, ClientId(cl), sn, u, u2, f, &so, &[])
}

#[test]
fn first_write_appends() {
    let cfg = AbstractConfig::new();
    let f = Fingerprint::new().write(Key(0), Value(7));
    let u2 = view(&[(0, &[0, 1])]);
    let next = commit(&cfg, 1, 0, &View::init(), &u2, &f).unwrap();
    assert_eq!(next.kvs.len(Key(0)), 2);
    assert_eq!(next.kvs.versions(Key(0))[1].writer, t(1, 0));
    assert_eq!(next.view(ClientId(1)), u2);
}

#[test]
fn stale_sequence_number_rejected() {
    let f = Fingerprint::new().write(Key(0), Value(7));
    let u2 = view(&[(0, &[0, 1])]);
    let cfg = commit(&AbstractConfig::new(), 1, 0, &View::init(), &u2, &f).unwrap();
    let f2 = Fingerprint::new().write(Key(1), Value(8));
    let u3 = view(&[(0, &[0, 1]), (1, &[0, 1])]);
    let r = commit(&cfg, 1, 0, &u2, &u3, &f2).unwrap_err();
    assert_eq!(r.guard, Guard::FreshId);
}

#[test]
fn each_guard_rejects() {
    let f = Fingerprint::new().write(Key(0), Value(7));
    let u1 = view(&[(0, &[0, 1])]);
    let cfg = commit(&AbstractConfig::new(), 1, 0, &View::init(), &u1, &f).unwrap();
    let g = |r: Result<AbstractConfig, Rejection>| r.unwrap_err().guard;
    // shrinking the committing client's view
    assert_eq!(g(commit(&cfg, 1, 1, &View::init(), &u1, &Fingerprint::new().read(Key(0), Value::INIT))), Guard::ViewMonotonic);
    // stale read
    let rd = Fingerprint::new().read(Key(0), Value::INIT);
    assert_eq!(g(commit(&cfg, 2, 0, &u1, &u1, &rd)), Guard::Lww);
    // dropping an index between u and u'
    assert_eq!(g(commit(&cfg, 2, 0, &u1, &View::init(), &Fingerprint::new().read(Key(0), Value(7)))), Guard::ViewExtends);
    // not seeing the own new version
    assert_eq!(g(commit(&cfg, 2, 0, &View::init(), &View::init(), &Fingerprint::new().write(Key(1), Value(1)))), Guard::ReadYourWrites);
    // index beyond the version list
    assert_eq!(g(commit(&cfg, 2, 0, &view(&[(0, &[0, 3])]), &view(&[(0, &[0, 3])]), &rd)), Guard::WellFormed);
    let bad_after = view(&[(0, &[0, 1]), (1, &[0, 1, 2])]);
    assert_eq!(g(commit(&cfg, 2, 0, &View::init(), &bad_after, &Fingerprint::new().write(Key(1), Value(1)))), Guard::WellFormedAfter);
}

#[test]
fn rejected_commit_leaves_config_unchanged() {
    let f = Fingerprint::new().write(Key(0), Value(7)).read(Key(1), Value::INIT);
    let mut cfg = AbstractConfig::new();
    let before = cfg.clone();
    let deps = DepGraph::new();
    let r = cfg.commit(&Commit {
        cl: ClientId(1),
        sn: 0,
        u: &View::init(),
        u_new: &View::init(),
        f: &f,
        deps: &deps,
    });
    assert_eq!(r.unwrap_err().guard, Guard::ReadYourWrites);
    assert_eq!(cfg, before);
}

#[test]
fn xview_examples() {
    let f = Fingerprint::new().write(Key(0), Value(7)).write(Key(1), Value(8));
    let u1 = view(&[(0, &[0, 1]), (1, &[0, 1])]);
    let cfg = commit(&AbstractConfig::new(), 1, 0, &View::init(), &u1, &f).unwrap();
    assert_eq!(xview_step(&cfg, ClientId(1), &u1).unwrap(), cfg);
    assert_eq!(xview_step(&cfg, ClientId(1), &View::init()).unwrap_err().guard, Guard::ViewMonotonic);
    assert_eq!(xview_step(&cfg, ClientId(2), &view(&[(0, &[0, 1])])).unwrap_err().guard, Guard::WellFormed);
    let ok = xview_step(&cfg, ClientId(2), &u1).unwrap();
    assert_eq!(ok.view(ClientId(2)), u1);
}

#[test]
fn reach_hand_counts() {
    let b = |txns| Bounds {
        clients: 1,
        keys: 1,
        txns_per_client: txns,
        values: ValueDomain::Set(vec![Value(1)]),
        cap: 10_000,
    };
    // init; after a read; after a write; after a read-write.
    assert_eq!(enumerate_reach(&b(1)).unwrap().len(), 4);
    assert_eq!(enumerate_reach(&b(0)).unwrap().len(), 1);
    let capped = Bounds { cap: 2, ..b(1) };
    assert!(matches!(enumerate_reach(&capped), Err(ReachError::CapExceeded { cap: 2, .. })));
}

#[test]
fn reach_configs_are_wellformed() {
    let b = Bounds {
        clients: 2,
        keys: 1,
        txns_per_client: 1,
        values: ValueDomain::Provenance,
        cap: 100_000,
    };
    let all = enumerate_reach(&b).unwrap();
    assert!(all.len() > 4);
    for cfg in &all {
        for cl in [ClientId(1), ClientId(2)] {
            assert!(wellformed(&cfg.kvs, &cfg.view(cl)));
        }
    }
}

/// A random small run of commits: each step picks a client, a fingerprint
/// and views built from the current configuration.
fn random_run(steps: Vec<(u32, u8, u8, bool)>) -> Vec<(AbstractConfig, Commit2)> {
    let mut cfg = AbstractConfig::new();
    let mut sn = [0u32; 3];
    let mut out = Vec::new();
    for (cl, kmask, wmask, widen) in steps {
        let c = ClientId(cl);
        let mut u = cfg.view(c);
        if widen {
            for k in 0..3 {
                for i in 0..cfg.kvs.len(Key(k)) {
                    u.insert(Key(k), i);
                }
            }
        }
        let mut f = Fingerprint::new();
        for k in 0..3u32 {
            if kmask >> k & 1 == 1 {
                let i = u.latest(Key(k)).unwrap();
                f = f.read(Key(k), cfg.kvs.versions(Key(k))[i].val);
            }
            if wmask >> k & 1 == 1 {
                f = f.write(Key(k), Value::provenance(c, sn[cl as usize], Key(k)));
            }
        }
        if f.is_empty() {
            continue;
        }
        let mut u2 = u.clone();
        for (k, _) in f.writes() {
            u2.insert(k, cfg.kvs.len(k));
        }
        let step = Commit2 { cl: c, sn: sn[cl as usize], u, u2, f };
        let deps = DepGraph::of_kvs(&cfg.kvs);
        let before = cfg.clone();
        if cfg.commit(&step.as_commit(&deps)).is_ok() {
            sn[cl as usize] += 1;
            out.push((before, step));
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Commit2 {
    cl: ClientId,
    sn: u32,
    u: View,
    u2: View,
    f: Fingerprint,
}

impl Commit2 {
    fn as_commit<'a>(&'a self, deps: &'a DepGraph) -> Commit<'a> {
        Commit {
            cl: self.cl,
            sn: self.sn,
            u: &self.u,
            u_new: &self.u2,
            f: &self.f,
            deps,
        }
    }
}

fn step_strategy() -> impl Strategy<Value = Vec<(u32, u8, u8, bool)>> {
    prop::collection::vec((1u32..3, 0u8..8, 0u8..8, any::<bool>()), 0..12)
}

proptest! {
    #[test]
    fn guard_order_is_irrelevant(steps in step_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for (cfg, step) in random_run(steps) {
            let deps = DepGraph::of_kvs(&cfg.kvs);
            // perturb the step so that some guards fail
            let mut variants = vec![step.clone()];
            variants.push(Commit2 { u2: View::init(), ..step.clone() });
            variants.push(Commit2 { u: View::init(), ..step.clone() });
            variants.push(Commit2 { sn: 0, ..step.clone() });
            for v in variants {
                let mut order = Guard::ALL.to_vec();
                order.shuffle(&mut rng);
                let mut a = cfg.clone();
                let mut b = cfg.clone();
                let ra = a.commit(&v.as_commit(&deps));
                let rb = b.commit_in_order(&v.as_commit(&deps), &order);
                prop_assert_eq!(ra.is_ok(), rb.is_ok());
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(cfg.failing_guards(&v.as_commit(&deps)).is_empty(), ra.is_ok());
            }
        }
    }

    #[test]
    fn update_only_appends(steps in step_strategy()) {
        let run = random_run(steps);
        for w in run.windows(2) {
            let (a, b) = (&w[0].0, &w[1].0);
            for k in 0..3 {
                let (va, vb) = (a.kvs.versions(Key(k)), b.kvs.versions(Key(k)));
                prop_assert!(vb.len() >= va.len());
                for (x, y) in va.iter().zip(vb) {
                    prop_assert_eq!(x.val, y.val);
                    prop_assert_eq!(x.writer, y.writer);
                    prop_assert!(x.readers.is_subset(&y.readers));
                }
            }
        }
    }

    #[test]
    fn accepted_commit_sees_own_writes(steps in step_strategy()) {
        for (cfg, step) in random_run(steps) {
            let deps = DepGraph::of_kvs(&cfg.kvs);
            let mut next = cfg.clone();
            next.commit(&step.as_commit(&deps)).unwrap();
            let u = next.view(step.cl);
            prop_assert!(wellformed(&next.kvs, &u));
            for (k, _) in step.f.writes() {
                prop_assert!(u.contains(k, next.kvs.len(k) - 1));
            }
        }
    }

    #[test]
    fn vis_tx_matches_comprehension(steps in step_strategy()) {
        for (cfg, step) in random_run(steps) {
            let mut expect = BTreeSet::from([TxnId::INIT]);
            for k in 0..3 {
                for (i, v) in cfg.kvs.versions(Key(k)).iter().enumerate() {
                    if step.u.contains(Key(k), i) {
                        expect.insert(v.writer);
                    }
                }
            }
            prop_assert_eq!(vis_tx(&cfg.kvs, &step.u), expect);
        }
    }

    #[test]
    fn closed_matches_naive_closure(n in 1usize..8, edges in prop::collection::vec((0usize..8, 0usize..8), 0..16), roles in any::<u8>(), vis in any::<u8>()) {
        // Node i is t(1, i); writers write their own key, readers read key 99.
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|&(a, b)| a < b && b < n).collect();
        let writer = |i: usize| roles >> i & 1 == 1;
        let mut k = AbstractKvs::new();
        let mut u = View::init();
        for i in 0..n {
            if writer(i) {
                k.append(Key(i as u32), Value(1), t(1, i as u32));
                if vis >> i & 1 == 1 {
                    u.insert(Key(i as u32), 1);
                }
            } else {
                k.add_reader(Key(99), 0, t(1, i as u32));
            }
        }
        let pairs: Vec<(TxnId, TxnId)> = edges.iter().map(|&(a, b)| (t(1, a as u32), t(1, b as u32))).collect();
        let r = closure_oracle(n, &edges);
        let visible = |i: usize| writer(i) && vis >> i & 1 == 1;
        let expect = (0..n).filter(|&v| visible(v)).all(|v| (0..n).all(|p| !r[p][v] || visible(p) || !writer(p)));
        prop_assert_eq!(closed(&k, &u, &pairs, &[]), expect);
        prop_assert_eq!(can_commit_tccv(&k, &u, &Fingerprint::new(), &DepGraph::from_relations(&[], &pairs)), expect);
    }
}
