//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line and
//! fails when its check does.

mod common;

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use common::{golden_vectors, greedy_pack, Harness, LossTrace, Vector};
use dsme_gack::analytics::{max_goodput, max_throughput, packets_per_gts, TheoryInput, TheoryScheme, DEFAULT_PAYLOADS};
use dsme_gack::codec::{decode_gack, encode_gack, DecodeError, GackBody, GackPayload};
use dsme_gack::experiments::{run, saturation_tau, sweep_tau, write_run_csv, MetricsReport, Preset, ScenarioConfig};
use dsme_gack::mac::AckScheme;
use dsme_gack::timing::slot_duration_symbols;
use dsme_gack::Rational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPLICATIONS: usize = 5;
const PACKETS_PER_NODE: u64 = 1000;

fn report(id: &str, ok: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn f(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

// ---- analytics ----

fn ifs(p: u64) -> u64 {
    if p <= 18 {
        12
    } else {
        40
    }
}

#[test]
fn c1_packets_per_gts_match_greedy_packer() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for so in 3..=10u8 {
        let slot = 60 << so;
        for p in 1..=116u64 {
            let airtime = 34 + 2 * p;
            // data, turnaround, 22-symbol ACK, then the inter-frame space
            let with_ack = greedy_pack(slot, airtime, 12 + 22 + ifs(p));
            // data and IFS, minus the turnaround no longer spent
            let with_gack = greedy_pack(slot, airtime, ifs(p) - 12);
            if packets_per_gts(TheoryScheme::RegularAck, so, p as usize) != with_ack
                || packets_per_gts(TheoryScheme::Gack, so, p as usize) != with_gack
            {
                mismatches.push((so, p));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let spot = (packets_per_gts(TheoryScheme::RegularAck, 3, 1), packets_per_gts(TheoryScheme::Gack, 3, 1));
    report(
        "1",
        mismatches.is_empty() && spot == (5, 13) && elapsed < 1.0,
        format!("SO=3 p=1 packs {spot:?}; mismatches {mismatches:?}; {elapsed:.3} s"),
    );
}

/// Bytes per GTS: full packets plus the largest remainder packet.
fn goodput_oracle(slot: u64, cycle: u64, overhead: u64) -> f64 {
    let rest = (slot % cycle).saturating_sub(overhead);
    (116 * (slot / cycle)) as f64 + rest as f64 / 2.0
}

#[test]
fn c2_goodput_ratios() {
    let ratio = |so: u8| {
        f(max_goodput::<Rational>(TheoryScheme::Gack, so, 14))
            / f(max_goodput::<Rational>(TheoryScheme::RegularAck, so, 14))
    };
    let oracle = |so: u8| {
        let slot = slot_duration_symbols(so);
        goodput_oracle(slot, 294, 34 + 40 - 12) / goodput_oracle(slot, 340, 34 + 34 + 40)
    };
    let (r3, r8) = (ratio(3), ratio(8));
    let matches_oracle = (3..=14).all(|so| (ratio(so) - oracle(so)).abs() < 1e-9);
    let tail: Vec<f64> = (9..=14).map(ratio).collect();
    let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
    let ok = (r3 - 1.35).abs() <= 0.01
        && (r8 - 1.16).abs() <= 0.01
        && ((r3 - 1.0) - 0.30).abs() <= 0.05
        && ((r8 - 1.0) - 0.17).abs() <= 0.05
        && matches_oracle
        && spread < 0.01;
    report(
        "2",
        ok,
        format!("SO=3 {r3:.4}, SO=8 {r8:.4}, SO 9..14 spread {spread:.4}, oracle agreement {matches_oracle}"),
    );
}

#[test]
fn c3_gack_ieee_ordering() {
    let thr = |s, p| f(max_throughput::<Rational>(&TheoryInput::new(s, 3, 8, p).unwrap()));
    let below_gack = (1..=116).all(|p| thr(TheoryScheme::GackIeee, p) < thr(TheoryScheme::Gack, p));
    let beats_ack: Vec<usize> = DEFAULT_PAYLOADS
        .iter()
        .copied()
        .filter(|&p| thr(TheoryScheme::GackIeee, p) > thr(TheoryScheme::RegularAck, p))
        .collect();
    let beats_ack_any: Vec<usize> =
        (1..=116).filter(|&p| thr(TheoryScheme::GackIeee, p) > thr(TheoryScheme::RegularAck, p)).collect();
    report(
        "3",
        below_gack && beats_ack == [1],
        format!("below GACK for every p: {below_gack}; beats ACK on the plotted payloads at {beats_ack:?} (over 1..=116 at {beats_ack_any:?})"),
    );
}

// ---- codec ----

#[test]
fn c4_codec_round_trips_and_rejections() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut round_trips = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(0..=20);
        let body = GackBody::new(
            (0..n)
                .map(|_| {
                    let len = rng.random_range(1..=16);
                    GackPayload {
                        node_addr: rng.random(),
                        base_seq: rng.random(),
                        bitmap: (0..len).map(|_| rng.random()).collect(),
                    }
                })
                .collect(),
        );
        let octets = encode_gack(&body).unwrap();
        if octets.len() == body.encoded_len() && decode_gack(&octets).as_ref() == Ok(&body) {
            round_trips += 1;
        }
    }
    let mut golden_ok = true;
    let mut kinds = HashSet::new();
    for v in golden_vectors() {
        match v {
            Vector::Body { octets, body } => {
                golden_ok &= encode_gack(&body).as_ref() == Ok(&octets) && decode_gack(&octets) == Ok(body);
            }
            Vector::Seqs { octets, node, base, seqs } => {
                let body = GackBody::new(vec![GackPayload::from_seqs(node, base, seqs)]);
                golden_ok &= encode_gack(&body).as_ref() == Ok(&octets);
            }
            Vector::Bad { octets, error } => match decode_gack(&octets) {
                Err(e) => {
                    golden_ok &= format!("{e:?}") == error;
                    kinds.insert(std::mem::discriminant(&e));
                }
                Ok(_) => golden_ok = false,
            },
        }
    }
    let all_kinds = [DecodeError::Truncated(0), DecodeError::CountMismatch(0), DecodeError::ZeroLengthBitmap(0)]
        .iter()
        .all(|e| kinds.contains(&std::mem::discriminant(e)));
    report(
        "4",
        round_trips == 10_000 && golden_ok && all_kinds,
        format!(
            "{round_trips}/10000 round trips, golden vectors stable {golden_ok}, every error kind seen {all_kinds}"
        ),
    );
}

// ---- simulation scenarios ----

fn scenario(preset: Preset) -> ScenarioConfig {
    ScenarioConfig { packets_per_node: PACKETS_PER_NODE, replications: REPLICATIONS, ..preset.config() }
}

/// Per tau point, the reports of all four schemes in `AckScheme::ALL` order.
struct Sweep {
    taus: Vec<f64>,
    points: Vec<Vec<MetricsReport>>,
}

impl Sweep {
    fn at(&self, i: usize, scheme: AckScheme) -> &MetricsReport {
        &self.points[i][AckScheme::ALL.iter().position(|&s| s == scheme).unwrap()]
    }
}

fn sweep(preset: Preset) -> &'static Sweep {
    static CELLS: [OnceLock<Sweep>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let i = Preset::ALL.iter().position(|&p| p == preset).unwrap();
    CELLS[i].get_or_init(|| {
        let start = Instant::now();
        let taus = preset.tau_grid();
        let reports = sweep_tau(&scenario(preset), &taus).unwrap();
        println!("{preset} sweep: {} runs in {:.1} s", reports.len() * REPLICATIONS, start.elapsed().as_secs_f64());
        Sweep { taus, points: reports.chunks(AckScheme::ALL.len()).map(<[_]>::to_vec).collect() }
    })
}

fn pdr_table(s: &Sweep) -> String {
    let mut out = String::new();
    for (i, tau) in s.taus.iter().enumerate() {
        out += &format!("\n    tau {tau:<5}");
        for scheme in AckScheme::ALL {
            let e = s.at(i, scheme).pdr;
            out += &format!(" {scheme} {:.3}±{:.3}", e.mean, e.half_width);
        }
    }
    out
}

#[test]
fn c5_worst_case_pdr_ordering() {
    let start = Instant::now();
    let s = sweep(Preset::Worst);
    let elapsed = start.elapsed().as_secs_f64();
    let loaded = s.taus.len() - 3..s.taus.len();
    let mut ok = elapsed < 300.0;
    for i in loaded {
        let pdr = |scheme| s.at(i, scheme).pdr;
        let (ack, cap) = (pdr(AckScheme::RegularAck), pdr(AckScheme::GackCap));
        for middle in [AckScheme::GackBeacon, AckScheme::GackGts] {
            ok &= ack.mean > pdr(middle).mean && pdr(middle).mean > cap.mean;
        }
        ok &= ack.low() > cap.high();
    }
    report("5", ok, format!("ack > beacon, gts > cap at the three most loaded points{}", pdr_table(s)));
}

#[test]
fn c6_best_case_gack_gain_before_saturation() {
    let s = sweep(Preset::Best);
    let sat = saturation_tau(&scenario(Preset::Best));
    let i = s.taus.iter().rposition(|&t| t >= sat).unwrap();
    let ack = s.at(i, AckScheme::RegularAck).pdr.mean;
    let gacks: Vec<(AckScheme, f64)> = AckScheme::ALL[1..].iter().map(|&g| (g, s.at(i, g).pdr.mean)).collect();
    let all_at_least = gacks.iter().all(|(_, p)| *p >= ack);
    let best = gacks.iter().map(|(_, p)| *p).fold(0.0, f64::max);
    report(
        "6",
        all_at_least && best - ack >= 0.10,
        format!(
            "saturation at tau {sat:.4} s, checked tau {}: ack {ack:.3}, gack {gacks:.3?}; every gack >= ack {all_at_least}, best gain {:+.1} pp{}",
            s.taus[i],
            100.0 * (best - ack),
            pdr_table(s)
        ),
    );
}

#[test]
fn c7_average_case_ack_reliability_and_gts_delay() {
    let s = sweep(Preset::Average);
    let mut ack_top = true;
    let mut gts_below_ack = true;
    let mut mean_delay = [0.0; 4];
    for i in 0..s.taus.len() {
        let ack = s.at(i, AckScheme::RegularAck);
        // a GACK scheme outranks regular ACKs only beyond the ACK interval
        for g in &AckScheme::ALL[1..] {
            ack_top &= s.at(i, *g).pdr.mean <= ack.pdr.high();
        }
        gts_below_ack &= s.at(i, AckScheme::GackGts).data_delay_hop.mean < ack.data_delay_hop.mean;
        for (k, scheme) in AckScheme::ALL.iter().enumerate() {
            mean_delay[k] += s.at(i, *scheme).data_delay_hop.mean / s.taus.len() as f64;
        }
    }
    let gts = AckScheme::ALL.iter().position(|&x| x == AckScheme::GackGts).unwrap();
    let gts_lowest = mean_delay.iter().enumerate().all(|(k, d)| k == gts || mean_delay[gts] < *d);
    report(
        "7",
        ack_top && gts_below_ack && gts_lowest,
        format!(
            "ack highest pdr {ack_top}; gts per-hop delay below ack everywhere {gts_below_ack}, lowest over the sweep {gts_lowest} (mean delays {mean_delay:.4?} s){}",
            pdr_table(s)
        ),
    );
}

#[test]
fn c8_ack_delay_ordering() {
    let mut ok = true;
    let mut detail = String::new();
    for preset in Preset::ALL {
        let s = sweep(preset);
        let mean = |scheme| {
            let v: Vec<f64> = (0..s.taus.len())
                .filter_map(|i| Some(s.at(i, scheme).ack_delay.mean).filter(|x| x.is_finite()))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (ack, cap, beacon) = (mean(AckScheme::RegularAck), mean(AckScheme::GackCap), mean(AckScheme::GackBeacon));
        let pointwise = (0..s.taus.len()).all(|i| {
            let d = |scheme| s.at(i, scheme).ack_delay.mean;
            d(AckScheme::RegularAck) < d(AckScheme::GackCap) && d(AckScheme::GackCap) < d(AckScheme::GackBeacon)
        });
        ok &= ack < cap && cap < beacon && pointwise;
        detail +=
            &format!("\n    {preset}: ack {ack:.4} s, cap {cap:.4} s, beacon {beacon:.4} s, at every tau {pointwise}");
    }
    report("8", ok, format!("ack < cap < beacon{detail}"));
}

#[test]
fn c9_idle_listen_share() {
    let mut ok = true;
    let mut shares = Vec::new();
    for preset in Preset::ALL {
        let c = ScenarioConfig { tau: None, replications: 1, ..scenario(preset) };
        let r = run(&c).unwrap();
        let share = r.runs[0].listen_share();
        ok &= (share - 0.5625).abs() <= 0.005;
        shares.push(format!("{preset} {:.3}%", 100.0 * share));
    }
    report("9", ok, format!("receive+listen share {}", shares.join(", ")));
}

#[test]
fn c10_determinism_conservation_rollback() {
    let c = ScenarioConfig {
        scheme: AckScheme::GackGts,
        tau: Some(0.3),
        replications: 2,
        packets_per_node: 100,
        ..Preset::Average.config()
    };
    let csv = || {
        let mut out = Vec::new();
        write_run_csv(&[run(&c).unwrap()], &mut out).unwrap();
        out
    };
    let identical = csv() == csv();

    let mut runs = 0;
    let mut conserved = true;
    for preset in Preset::ALL {
        for point in &sweep(preset).points {
            for r in point.iter().flat_map(|r| &r.runs) {
                runs += 1;
                conserved &= r.generated == r.delivered + r.dropped_queue + r.dropped_retry + r.residual;
            }
        }
    }

    let mut total = 0;
    let mut rolled_back = 0;
    for i in 0..1000 {
        let o = Harness::new(i as u64).run(LossTrace::scripted(i));
        total += usize::from(o.total && o.quiescent);
        rolled_back += usize::from(!o.succeeded);
    }
    report(
        "10",
        identical && conserved && total == 1000,
        format!("byte-identical csv {identical}; conservation over {runs} runs {conserved}; {total}/1000 loss traces total ({rolled_back} rolled back)"),
    );
}
