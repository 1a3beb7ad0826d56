//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use k256::ProjectivePoint;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pikachu_core::bench::{dkg_bench, sign_bench};
use pikachu_core::crypto::{schnorr_verify, schnorr_verify_encoded, GroupPoint, Hash32, Keypair, Scalar};
use pikachu_core::dkg::{run_dkg, DkgFault, DkgMessage, DkgRun};
use pikachu_core::frost::{run_signing, select_signers, CommitmentBoard, SignerState, SigningFault, SigningRequest};
use pikachu_core::ledger::{LedgerBackend, Rejection};
use pikachu_core::net::{Index, LocalChannel};
use pikachu_core::orchestrator::{ConfigPayload, RewardDecision};
use pikachu_core::scenario::Scenario;
use pikachu_core::sim::{self, RunReport};
use pikachu_core::taproot::{tweak_pubkey, tweak_signature, verify_key_path};
use pikachu_core::verifier::{checkpoint_shape, resolve_initial_tx, walk_chain, InitialTx, Verdict};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);
/// `(n, t, faults, expected complaint answers)`
type DkgScript = (u32, u32, Vec<(Index, DkgFault)>, usize);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run_scenario(name: &str) -> Result<RunReport, String> {
    let report = sim::run(&scenario(name)).map_err(|e| e.to_string())?;
    ensure(report.ok(), || format!("violations: {:?}", report.violations))?;
    Ok(report)
}

/// Every `t`-subset of the given shares interpolates to one secret whose
/// image is `group_key`. Returns the number of subsets checked.
fn check_subsets(shares: &[(Index, Scalar)], t: usize, group_key: &GroupPoint) -> Result<usize, String> {
    let n = shares.iter().map(|(i, _)| *i).max().unwrap_or(0);
    let table = common::LagrangeTable::new(n);
    let points: Vec<(u32, k256::Scalar)> = shares.iter().map(|(i, s)| (*i, common::scalar(s))).collect();
    let secret = table.interpolate(&points[..t]);
    ensure(ProjectivePoint::GENERATOR * secret == common::point(group_key), || {
        "interpolated secret does not match the group key".into()
    })?;
    let mut count = 0;
    let mut bad = None;
    common::for_each_subset(&points, t, |subset| {
        count += 1;
        if bad.is_none() && table.interpolate(subset) != secret {
            bad = Some(subset.iter().map(|(i, _)| *i).collect::<Vec<_>>());
        }
    });
    match bad {
        Some(s) => Err(format!("subset {s:?} interpolates to a different secret")),
        None => Ok(count),
    }
}

/// Agreement of all listed participants on key and qualified set, shares
/// consistent with the published verification shares, and the subset check.
fn check_dkg(run: &DkgRun, holders: &[Index], t: usize) -> Result<usize, String> {
    let first = &run.results[&holders[0]];
    for i in holders {
        let r = run.results.get(i).ok_or_else(|| format!("participant {i} has no result"))?;
        ensure(r.group_key == first.group_key && r.qualified == first.qualified, || {
            format!("participant {i} disagrees on Y or the qualified set")
        })?;
        ensure(
            common::point(&r.verification_share(*i)) == ProjectivePoint::GENERATOR * common::scalar(&r.share),
            || format!("share of {i} does not match its verification share"),
        )?;
    }
    let shares: Vec<(Index, Scalar)> = holders.iter().map(|i| (*i, run.results[i].share)).collect();
    check_subsets(&shares, t, &first.group_key)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut mutations = 0usize;
    for trial in 0..1000 {
        let kp = Keypair::random(&mut rng);
        let mut m = vec![0u8; rng.gen_range(1..=64)];
        rng.fill_bytes(&mut m);
        let sig = kp.sign(&m, &mut rng);
        ensure(schnorr_verify(&kp.public, &m, &sig), || format!("trial {trial}: valid signature rejected"))?;
        ensure(
            common::schnorr_holds(&common::point(&kp.public), &m, &common::scalar(&sig.z), &common::point(&sig.r)),
            || format!("trial {trial}: reference equation fails"),
        )?;
        let pk = kp.public.to_bytes();
        let bytes = sig.to_bytes();
        let m_bits = m.len() * 8;
        let s_bits = bytes.len() * 8;
        // One random flip of each component everywhere, every flip on a sample.
        let flips: Vec<usize> = if trial % 100 == 0 {
            (0..m_bits + s_bits).collect()
        } else {
            vec![
                rng.gen_range(0..m_bits),
                m_bits + rng.gen_range(0..33 * 8),
                m_bits + 33 * 8 + rng.gen_range(0..32 * 8),
            ]
        };
        for bit in flips {
            let (mut mm, mut ss) = (m.clone(), bytes);
            if bit < m_bits {
                mm[bit / 8] ^= 1 << (bit % 8);
            } else {
                let b = bit - m_bits;
                ss[b / 8] ^= 1 << (b % 8);
            }
            mutations += 1;
            ensure(!schnorr_verify_encoded(&pk, &mm, &ss), || {
                format!("trial {trial}: flipping bit {bit} still verifies")
            })?;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 10.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!("1000 round-trips, {mutations} mutations rejected in {elapsed:.2}s"))
}

fn criterion_2() -> Outcome {
    let mut subsets = 0;
    for (n, t) in [(3u32, 2u32), (5, 3), (7, 4), (9, 5), (21, 11)] {
        let b = dkg_bench(n, t, u64::from(n) * 100 + u64::from(t)).map_err(|e| e.to_string())?;
        let all: Vec<Index> = (1..=n).collect();
        ensure(b.run.misbehaving.is_empty(), || format!("({n},{t}): honest run flagged {:?}", b.run.misbehaving))?;
        ensure(b.run.results[&1].qualified == all.iter().copied().collect(), || {
            format!("({n},{t}): qualified set is not everyone")
        })?;
        subsets += check_dkg(&b.run, &all, t as usize).map_err(|e| format!("({n},{t}): {e}"))?;
    }
    Ok(format!("{subsets} subsets interpolate to the group secret"))
}

fn dkg_with(faults: &[(Index, DkgFault)], seed: u64) -> Result<DkgRun, String> {
    let faults: BTreeMap<Index, DkgFault> = faults.iter().cloned().collect();
    run_dkg(&mut LocalChannel::new(), 5, 3, &faults, &mut ChaCha20Rng::seed_from_u64(seed)).map_err(|e| e.to_string())
}

fn criterion_3() -> Outcome {
    let set = |v: &[Index]| v.iter().copied().collect::<BTreeSet<Index>>();
    struct Case {
        name: &'static str,
        faults: Vec<(Index, DkgFault)>,
        misbehaving: BTreeSet<Index>,
        rehabilitated: BTreeSet<Index>,
    }
    let bad_share = |recipients: Vec<Index>, answer_honestly| DkgFault::BadShare { recipients, answer_honestly };
    let cases = [Case {
            name: "aborting dealer",
            faults: vec![(1, DkgFault::Abort)],
            misbehaving: set(&[1]),
            rehabilitated: set(&[]),
        },
        Case {
            name: "bad share, answered with the bad share",
            faults: vec![(2, bad_share(vec![3], false))],
            misbehaving: set(&[2]),
            rehabilitated: set(&[]),
        },
        Case {
            name: "bad share, answered honestly",
            faults: vec![(2, bad_share(vec![3, 4], true))],
            misbehaving: set(&[]),
            rehabilitated: set(&[2]),
        },
        Case {
            name: "false complainer",
            faults: vec![(3, DkgFault::FalseComplaint { against: 4 })],
            misbehaving: set(&[]),
            rehabilitated: set(&[4]),
        },
        Case {
            name: "all three at once",
            faults: vec![
                (1, DkgFault::Abort),
                (2, bad_share(vec![3, 4], false)),
                (5, DkgFault::FalseComplaint { against: 4 }),
            ],
            misbehaving: set(&[1, 2]),
            rehabilitated: set(&[4]),
        }];
    for (k, case) in cases.iter().enumerate() {
        let run = dkg_with(&case.faults, 30 + k as u64).map_err(|e| format!("{}: {e}", case.name))?;
        ensure(run.misbehaving == case.misbehaving, || {
            format!("{}: misbehaving {:?}, expected {:?}", case.name, run.misbehaving, case.misbehaving)
        })?;
        ensure(run.rehabilitated == case.rehabilitated, || {
            format!("{}: rehabilitated {:?}, expected {:?}", case.name, run.rehabilitated, case.rehabilitated)
        })?;
        let faulty: BTreeSet<Index> = case.faults.iter().map(|(i, _)| *i).collect();
        let honest: Vec<Index> = (1..=5).filter(|i| !faulty.contains(i)).collect();
        let qualified: BTreeSet<Index> = (1..=5).filter(|i| !case.misbehaving.contains(i)).collect();
        ensure(run.results[&honest[0]].qualified == qualified, || format!("{}: wrong qualified set", case.name))?;
        let holders: Vec<Index> = (1..=5).filter(|i| run.results.contains_key(i)).collect();
        check_dkg(&run, &holders, 3).map_err(|e| format!("{}: {e}", case.name))?;
    }
    Ok(format!("{} fault scripts finalize with the expected misbehaving sets", cases.len()))
}

struct Signing {
    group_key: GroupPoint,
    shares: BTreeMap<Index, GroupPoint>,
    members: Vec<Index>,
    signers: BTreeMap<Index, SignerState>,
    board: CommitmentBoard,
}

fn setup_signing(n: u32, t: u32, seed: u64) -> Result<Signing, String> {
    let b = dkg_bench(n, t, seed).map_err(|e| e.to_string())?;
    let any = &b.run.results[&1];
    Ok(Signing {
        group_key: b.group_key,
        shares: any.verification_shares(),
        members: any.qualified.iter().copied().collect(),
        signers: b.run.results.iter().map(|(i, r)| (*i, SignerState::new(*i, r.share))).collect(),
        board: CommitmentBoard::default(),
    })
}

fn criterion_4() -> Outcome {
    let mut s = setup_signing(5, 3, 44)?;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let y = common::point(&s.group_key);
    for trial in 0..200 {
        let mut m = vec![0u8; rng.gen_range(1..=96)];
        rng.fill_bytes(&mut m);
        let mut ckpt = [0u8; 32];
        rng.fill_bytes(&mut ckpt);
        let key = tweak_pubkey(&s.group_key, &Hash32(ckpt));
        let q = common::tweaked_key(&y, &ckpt);
        ensure(common::point(&key.output) == q, || format!("trial {trial}: tweaked key differs from Q = P + tG"))?;
        let request = SigningRequest {
            message: &m,
            group_key: s.group_key,
            tweaked_key: key.output,
            members: s.members.clone(),
            verification_shares: &s.shares,
            beacon: Scalar::random_nonzero(&mut rng),
            threshold: 3,
            preprocess_count: 4,
        };
        let run = run_signing(&mut LocalChannel::new(), &request, &mut s.signers, &mut s.board, &BTreeMap::new(), &mut rng)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let (z, r) = (common::scalar(&run.signature.z), common::point(&run.signature.r));
        // Raw aggregate: challenge binds Q, response is under P.
        ensure(ProjectivePoint::GENERATOR * z == r + y * common::challenge(&m, &r, &q), || {
            format!("trial {trial}: aggregate does not satisfy zG = R + H(m‖R‖Q)·P")
        })?;
        let tweaked = tweak_signature(&run.signature, &m, &key);
        let z2 = common::scalar(&tweaked.z);
        ensure(z2 == z + common::challenge(&m, &r, &q) * common::taptweak(&y, &ckpt), || {
            format!("trial {trial}: z' is not z + c·t")
        })?;
        ensure(common::schnorr_holds(&q, &m, &z2, &r), || format!("trial {trial}: z'G != R + H(m‖R‖Q)·Q"))?;
        ensure(verify_key_path(&key.output, &m, &tweaked), || format!("trial {trial}: key-path check fails"))?;
    }
    Ok("200 tweaked signatures satisfy z'G = R + H(m‖R‖Q)·Q".into())
}

fn criterion_5() -> Outcome {
    let mut detail = Vec::new();
    let scripts: Vec<(&str, Vec<SigningFault>)> = vec![
        ("1 withholding", vec![SigningFault::Withhold]),
        ("1 bad partial", vec![SigningFault::BadPartial]),
        ("2 withholding", vec![SigningFault::Withhold, SigningFault::Withhold]),
        ("2 bad partials", vec![SigningFault::BadPartial, SigningFault::BadPartial]),
        ("1 of each", vec![SigningFault::Withhold, SigningFault::BadPartial]),
    ];
    for (k, (name, kinds)) in scripts.into_iter().enumerate() {
        let mut s = setup_signing(7, 4, 70 + k as u64)?;
        let mut rng = ChaCha20Rng::seed_from_u64(k as u64);
        let beacon = Scalar::random_nonzero(&mut rng);
        let first = select_signers(&s.members, &beacon, 4).map_err(|e| e.to_string())?;
        let faults: BTreeMap<Index, SigningFault> = first.iter().copied().zip(kinds.iter().cloned()).collect();
        let w = faults.len();
        let m = format!("restart {name}").into_bytes();
        let key = tweak_pubkey(&s.group_key, &Hash32([k as u8; 32]));
        let request = SigningRequest {
            message: &m,
            group_key: s.group_key,
            tweaked_key: key.output,
            members: s.members.clone(),
            verification_shares: &s.shares,
            beacon,
            threshold: 4,
            preprocess_count: 2,
        };
        let run = run_signing(&mut LocalChannel::new(), &request, &mut s.signers, &mut s.board, &faults, &mut rng)
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(run.rounds <= w + 1, || format!("{name}: {} rounds", run.rounds))?;
        let named: BTreeSet<Index> = faults.keys().copied().collect();
        ensure(run.cheaters == named, || format!("{name}: named {:?}, expected {named:?}", run.cheaters))?;
        ensure(run.proofs.iter().all(|p| named.contains(&p.index)), || format!("{name}: proof against an honest signer"))?;
        ensure(
            run.signer_sets.last().is_some_and(|set| set.iter().all(|i| !named.contains(i))),
            || format!("{name}: final signer set contains a cheater"),
        )?;
        let tweaked = tweak_signature(&run.signature, &m, &key);
        ensure(verify_key_path(&key.output, &m, &tweaked), || format!("{name}: final signature invalid"))?;
        detail.push(format!("{name}: {} rounds", run.rounds));
    }
    Ok(detail.join(", "))
}

fn criterion_6() -> Outcome {
    for (n, t) in [(3u32, 2u32), (5, 3), (7, 4), (21, 11)] {
        let mut s = setup_signing(n, t, 600 + u64::from(n))?;
        let m = b"count".to_vec();
        let key = tweak_pubkey(&s.group_key, &Hash32([6; 32]));
        let request = SigningRequest {
            message: &m,
            group_key: s.group_key,
            tweaked_key: key.output,
            members: s.members.clone(),
            verification_shares: &s.shares,
            beacon: Scalar::from_u64(u64::from(n)),
            threshold: t as usize,
            preprocess_count: 1,
        };
        let mut ch = common::CountingChannel::<LocalChannel>::default();
        let run = run_signing(&mut ch, &request, &mut s.signers, &mut s.board, &BTreeMap::new(), &mut rand::thread_rng())
            .map_err(|e| e.to_string())?;
        for i in &run.signer_sets[0] {
            ensure(ch.broadcasts.get(i) == Some(&2), || {
                format!("({n},{t}): signer {i} sent {:?} broadcasts", ch.broadcasts.get(i))
            })?;
        }
        ensure(ch.private == 0, || format!("({n},{t}): signing used private messages"))?;
    }

    // Expected DKG counts: every dealer sends one private share to each of
    // the n participants and broadcasts its commitments; every participant
    // that dealt broadcasts one complaint vector; every accused dealer that
    // is still present answers each complaint against it.
    let scripts: Vec<DkgScript> = vec![
        (3, 2, vec![], 0),
        (5, 3, vec![], 0),
        (21, 11, vec![], 0),
        (5, 3, vec![(1, DkgFault::Abort)], 0),
        (5, 3, vec![(2, DkgFault::BadShare { recipients: vec![3, 4], answer_honestly: true })], 2),
        (
            7,
            4,
            vec![
                (1, DkgFault::Abort),
                (2, DkgFault::BadShare { recipients: vec![5], answer_honestly: false }),
                (3, DkgFault::FalseComplaint { against: 6 }),
            ],
            2,
        ),
    ];
    for (n, t, faults, answers) in scripts {
        let aborting = faults.iter().filter(|(_, f)| *f == DkgFault::Abort).count();
        let dealers = n as usize - aborting;
        let faults: BTreeMap<Index, DkgFault> = faults.into_iter().collect();
        let mut ch = common::CountingChannel::<LocalChannel>::default();
        let run = run_dkg(&mut ch, n, t, &faults, &mut ChaCha20Rng::seed_from_u64(u64::from(n))).map_err(|e| e.to_string())?;
        let mut kinds = [0usize; 4];
        for p in &ch.broadcast_payloads {
            match DkgMessage::decode(p).map_err(|e| e.to_string())? {
                DkgMessage::DealBroadcast(_) => kinds[0] += 1,
                DkgMessage::DealPrivate(_) => kinds[1] += 1,
                DkgMessage::Complaints(_) => kinds[2] += 1,
                DkgMessage::Answer(_) => kinds[3] += 1,
            }
        }
        let expected = [dealers, 0, dealers, answers];
        ensure(ch.private == dealers * n as usize, || {
            format!("({n},{t}): {} private shares, expected {}", ch.private, dealers * n as usize)
        })?;
        ensure(kinds == expected, || format!("({n},{t}): broadcasts {kinds:?}, expected {expected:?}"))?;
        ensure(
            run.counts.private_shares == ch.private && run.counts.broadcasts() == ch.broadcast_payloads.len(),
            || format!("({n},{t}): reported counts {:?} differ from the channel", run.counts),
        )?;
    }
    Ok("signing: 2 broadcasts per signer; DKG counts match n·dealers private + dealers + complaint vectors + answers".into())
}

fn criterion_7() -> Outcome {
    let report = run_scenario("honest_5.scn")?;
    ensure(report.records.len() == 7, || format!("{} records", report.records.len()))?;
    ensure(report.checkpoints_confirmed() == 6, || format!("{} checkpoints confirmed", report.checkpoints_confirmed()))?;
    let ledger = &report.ledger;
    let tx0 = match resolve_initial_tx(ledger, &report.anchor.q0, report.anchor.h0) {
        Ok(InitialTx::Found(tx)) => tx,
        other => return Err(format!("initial transaction: {other:?}")),
    };
    ensure(Some(tx0.id()) == report.records[0].txid(), || "initial transaction is not the recorded one".into())?;
    let mut prev = tx0;
    for r in &report.records[1..] {
        let tx = r.tx.as_ref().ok_or_else(|| format!("checkpoint {} has no tx", r.index))?;
        ensure(ledger.is_final(&tx.id()), || format!("checkpoint {} not final", r.index))?;
        ensure(tx.inputs == vec![prev.outpoint(0)], || format!("checkpoint {} does not spend only the previous head", r.index))?;
        ensure(tx.outputs.len() == 2, || format!("checkpoint {} has {} outputs", r.index, tx.outputs.len()))?;
        let (vout, q, cid) = checkpoint_shape(tx).ok_or_else(|| format!("checkpoint {} malformed", r.index))?;
        ensure(vout == 0 && q == r.q && cid == r.cid, || format!("checkpoint {} pays the wrong key or cid", r.index))?;
        ensure(tx.outputs[0].amount + 200 == prev.outputs[0].amount && tx.outputs[1].amount == 0, || {
            format!("checkpoint {} amounts", r.index)
        })?;
        let payload = ConfigPayload::decode(report.store.get(&cid).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(payload.index == r.index && payload.taproot_key().output == q, || {
            format!("checkpoint {} payload mismatch", r.index)
        })?;
        // Signed by the previous configuration under its output key.
        let prev_q = common::point(&prev.outputs[0].key().copied().ok_or("prev output has no key")?);
        let sig = tx.witnesses[0];
        ensure(common::schnorr_holds(&prev_q, tx.digest().as_bytes(), &common::scalar(&sig.z), &common::point(&sig.r)), || {
            format!("checkpoint {} witness fails the reference check", r.index)
        })?;
        prev = tx.clone();
    }
    let head = walk_chain(ledger, &report.records[0].tx.clone().unwrap()).map_err(|e| e.to_string())?;
    ensure(head.hops == 6 && Some(head.head.id()) == report.records[6].txid(), || "ledger walk does not end at checkpoint 6".into())?;
    let v = report.verdict("honest").ok_or("no honest verdict")?;
    ensure(v.verdict == Verdict::Accepted && v.rollback_count == 0, || format!("verifier: {v:?}"))?;
    Ok("6 checkpoints confirmed in one spend chain; verifier accepted with rollback 0".into())
}

fn criterion_8() -> Outcome {
    let s = scenario("lra_attack.scn");
    ensure(s.params.lag == 2, || "lag is not 2".into())?;
    let report = run_scenario("lra_attack.scn")?;
    let last = report.records.len() as u32 - 1;
    let leaked: BTreeSet<u32> = report
        .log
        .lines()
        .iter()
        .filter(|l| l.contains("\"event\":\"keys-leaked\""))
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok()?["config"].as_u64().map(|c| c as u32))
        .collect();
    ensure(leaked == (0..=last - 2).collect(), || format!("leaked configs {leaked:?}, last is {last}"))?;
    let double_spends = report
        .ledger_rejections
        .iter()
        .filter(|(_, r)| matches!(r, Rejection::DoubleSpend { .. }))
        .count();
    ensure(double_spends >= 2, || format!("{double_spends} double spends rejected"))?;
    // The post-h0 branch exists on the ledger but is not chosen.
    let tx0_id = report.records[0].txid().unwrap();
    let q0 = report.anchor.q0;
    let other_spends = report
        .ledger
        .outputs_to(&q0, None)
        .iter()
        .flat_map(|f| (0..f.outputs.len() as u32).map(move |v| f.outpoint(v)))
        .filter_map(|op| report.ledger.find_spending_tx(&op))
        .filter(|tx| tx.id() != tx0_id)
        .count();
    ensure(other_spends >= 1, || "no post-h0 spend of Q0 on the ledger".into())?;
    match resolve_initial_tx(&report.ledger, &q0, report.anchor.h0) {
        Ok(InitialTx::Found(tx)) if tx.id() == tx0_id => {}
        other => return Err(format!("initial transaction resolved to {other:?}")),
    }
    let forged = report.verdict("forged").ok_or("forged chain was not served")?;
    ensure(forged.verdict == Verdict::RejectedNoValidState, || format!("forged: {forged:?}"))?;
    let honest = report.verdict("honest").ok_or("no honest verdict")?;
    ensure(honest.verdict == Verdict::Accepted && honest.rollback_count == 0, || format!("honest: {honest:?}"))?;
    let tip = report.verdict("forged-tip").ok_or("no forged-tip verdict")?;
    ensure(tip.verdict == Verdict::Accepted && tip.rollback_count == 1, || format!("forged tip: {tip:?}"))?;
    Ok(format!(
        "configs {leaked:?} leaked; {double_spends} double spends rejected; forged chain rejected, honest accepted"
    ))
}

fn criterion_9() -> Outcome {
    let s = scenario("init_5.scn");
    let report = sim::run_init(&s).map_err(|e| e.to_string())?;
    ensure(report.ok(), || format!("violations: {:?}", report.violations))?;
    let ledger = &report.ledger;
    let q0 = report.anchor.q0;
    let tx0_id = report.records[0].txid().ok_or("no initial transaction")?;
    let mut on_time = BTreeSet::new();
    let mut late = BTreeSet::new();
    for f in ledger.outputs_to(&q0, None).into_iter().filter(|f| f.id() != tx0_id) {
        let h = ledger.confirmation_height(&f.id()).ok_or("unconfirmed funding")?;
        for (v, o) in f.outputs.iter().enumerate() {
            if o.key() == Some(&q0) {
                if h < s.params.h0 {
                    on_time.insert(f.outpoint(v as u32));
                } else {
                    late.insert(f.outpoint(v as u32));
                }
            }
        }
    }
    ensure(on_time.len() == 4 && late.len() == 1, || format!("{} on time, {} late", on_time.len(), late.len()))?;
    let tx0 = report.records[0].tx.as_ref().ok_or("no initial transaction")?;
    let inputs: BTreeSet<_> = tx0.inputs.iter().copied().collect();
    ensure(inputs == on_time, || "tx0 does not spend exactly the on-time funding".into())?;
    ensure(report.refunded == vec![5], || format!("refunded {:?}", report.refunded))?;
    let late_op = *late.iter().next().unwrap();
    let refund = ledger.find_spending_tx(&late_op).ok_or("late funding never refunded")?;
    let refund_h = ledger.confirmation_height(&refund.id()).unwrap();
    ensure(refund_h >= s.params.release, || format!("refund confirmed at {refund_h}"))?;
    ensure(
        report.ledger_rejections.iter().any(|(_, r)| matches!(r, Rejection::PrematureTimelock { .. })),
        || "early refund was not rejected".into(),
    )?;
    let reward = s.params.reward();
    let expected: Vec<(u32, RewardDecision)> = vec![
        (1, RewardDecision::Eligible { reward }),
        (2, RewardDecision::Eligible { reward }),
        (3, RewardDecision::Eligible { reward }),
        (4, RewardDecision::Eligible { reward }),
        (5, RewardDecision::NotFunded),
        (2, RewardDecision::CommitmentMismatch),
    ];
    let got: Vec<(u32, RewardDecision)> = report.rewards.iter().map(|(c, d)| (c.id, *d)).collect();
    ensure(got == expected, || format!("rewards {got:?}"))?;
    Ok(format!("tx0 spends the 4 on-time UTXOs; late refund at height {refund_h}; rewards as expected"))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    dkg_bench(21, 11, 10).map_err(|e| e.to_string())?;
    let dkg_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let s = sign_bench(21, 11, b"performance", 10).map_err(|e| e.to_string())?;
    let sign_total = start.elapsed().as_secs_f64();
    ensure(s.valid, || "signature invalid".into())?;
    ensure(dkg_s < 10.0, || format!("dkg {dkg_s:.2}s"))?;
    ensure(sign_total < 10.0, || format!("sign command {sign_total:.2}s"))?;
    Ok(format!(
        "dkg {dkg_s:.2}s, sign command {sign_total:.2}s (signing alone {:.3}s)",
        s.sign_elapsed.as_secs_f64()
    ))
}

fn criterion_11() -> Outcome {
    let mut lines = 0;
    for name in ["honest_5.scn", "lra_attack.scn"] {
        let s = scenario(name);
        let a = sim::run(&s).map_err(|e| e.to_string())?.log.text();
        let b = sim::run(&s).map_err(|e| e.to_string())?.log.text();
        ensure(a == b, || format!("{name}: reruns differ"))?;
        lines += a.lines().count();
    }
    let s = scenario("init_5.scn");
    let a = sim::run_init(&s).map_err(|e| e.to_string())?.log.text();
    let b = sim::run_init(&s).map_err(|e| e.to_string())?.log.text();
    ensure(a == b, || "init_5.scn: reruns differ".into())?;
    for (x, y) in [(1u32, 1u32), (3, 2)] {
        let a = dkg_bench(x + 2, y + 1, 77).map_err(|e| e.to_string())?;
        let b = dkg_bench(x + 2, y + 1, 77).map_err(|e| e.to_string())?;
        ensure(a.group_key == b.group_key, || "dkg reruns differ".into())?;
    }
    Ok(format!("byte-identical reruns ({lines} log lines)"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "Schnorr round-trips and bit mutations", criterion_1),
        (2, "DKG correctness", criterion_2),
        (3, "DKG robustness", criterion_3),
        (4, "FROST with taproot tweak", criterion_4),
        (5, "signing restart liveness", criterion_5),
        (6, "message counts", criterion_6),
        (7, "end-to-end checkpoint chain", criterion_7),
        (8, "long-range attack safety", criterion_8),
        (9, "initialization protocol", criterion_9),
        (10, "performance sanity bound", criterion_10),
        (11, "determinism", criterion_11),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail} [{secs:.2}s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {e} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
