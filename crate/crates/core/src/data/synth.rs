//! Synthetic NSL-KDD-style traffic generator.
//!
//! Emits text in the standard 43-field record format, with DoS and
//! normal records arriving in bursts the way floods do in the real
//! capture. The two classes are separable through several redundant
//! signals (connection counts, SYN-error rates, bytes, service mix), so
//! a correct pipeline must reach high accuracy on this data quickly.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TsanError};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    /// Target fraction of DoS records; hit exactly after rounding.
    pub dos_fraction: f64,
    /// Mean run length of same-class bursts.
    pub burst_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            dos_fraction: 0.5,
            burst_len: 20,
            seed: 42,
        }
    }
}

/// Attack archetypes with their characteristic protocol/service/flag.
const ATTACKS: [(&str, &str, &str, &str); 3] = [
    ("neptune", "tcp", "private", "S0"),
    ("smurf", "icmp", "ecr_i", "SF"),
    ("back", "tcp", "http", "SF"),
];

const NORMAL_SERVICES: [&str; 4] = ["http", "smtp", "ftp_data", "domain_u"];

pub fn generate(cfg: &SynthConfig) -> Result<String> {
    if cfg.n == 0 {
        return Err(TsanError::config("cannot generate zero records".to_string()));
    }
    if !(0.0..=1.0).contains(&cfg.dos_fraction) {
        return Err(TsanError::config(format!(
            "dos fraction {} must be in [0, 1]",
            cfg.dos_fraction
        )));
    }
    if cfg.burst_len == 0 {
        return Err(TsanError::config("burst length must be >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_dos = ((cfg.n as f64) * cfg.dos_fraction).round() as usize;
    let mut remaining = [cfg.n - n_dos, n_dos]; // [normal, dos]
    let mut dos_turn = rng.gen::<bool>();

    let lo = (cfg.burst_len / 2).max(1);
    let hi = cfg.burst_len + cfg.burst_len / 2;
    let mut out = String::new();
    while remaining[0] + remaining[1] > 0 {
        let side = if remaining[usize::from(dos_turn)] > 0 {
            usize::from(dos_turn)
        } else {
            1 - usize::from(dos_turn)
        };
        let burst = rng.gen_range(lo..=hi).min(remaining[side]);
        remaining[side] -= burst;
        let attack = ATTACKS[rng.gen_range(0..ATTACKS.len())];
        for _ in 0..burst {
            if side == 1 {
                write_dos_record(&mut out, &mut rng, attack);
            } else {
                write_normal_record(&mut out, &mut rng);
            }
        }
        dos_turn = !dos_turn;
    }
    Ok(out)
}

fn clampi(v: f64, lo: f64, hi: f64) -> u32 {
    v.max(lo).min(hi).round() as u32
}

fn normal_draw<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    Normal::new(mean, std).expect("std > 0").sample(rng)
}

fn write_dos_record<R: Rng>(out: &mut String, rng: &mut R, attack: (&str, &str, &str, &str)) {
    let (label, protocol, service, flag) = attack;
    let syn_flood = flag == "S0";
    let src_bytes = if syn_flood { 0 } else { rng.gen_range(1000u32..1500) };
    let count = clampi(normal_draw(rng, 400.0, 50.0), 1.0, 511.0);
    let srv_count = clampi(normal_draw(rng, 380.0, 60.0), 1.0, 511.0);
    let serror = if syn_flood {
        rng.gen_range(0.85..1.0)
    } else {
        rng.gen_range(0.0..0.1)
    };
    push_record(
        out,
        &RecordDraw {
            duration: 0,
            protocol,
            service,
            flag,
            src_bytes,
            dst_bytes: 0,
            logged_in: 0,
            count,
            srv_count,
            serror,
            same_srv: rng.gen_range(0.9..1.0),
            diff_srv: rng.gen_range(0.0..0.05),
            dst_host_count: 255,
            dst_host_srv_count: clampi(normal_draw(rng, 250.0, 10.0), 1.0, 255.0),
            label,
            difficulty: rng.gen_range(15..=21),
        },
    );
}

fn write_normal_record<R: Rng>(out: &mut String, rng: &mut R) {
    let protocol = if rng.gen_bool(0.7) { "tcp" } else { "udp" };
    let service = NORMAL_SERVICES[rng.gen_range(0..NORMAL_SERVICES.len())];
    let flag = if rng.gen_bool(0.92) { "SF" } else { "REJ" };
    push_record(
        out,
        &RecordDraw {
            duration: if rng.gen_bool(0.8) { 0 } else { rng.gen_range(1..300) },
            protocol,
            service,
            flag,
            src_bytes: rng.gen_range(100u32..2000),
            dst_bytes: rng.gen_range(100u32..5000),
            logged_in: u32::from(rng.gen_bool(0.7)),
            count: clampi(normal_draw(rng, 30.0, 15.0), 0.0, 511.0),
            srv_count: clampi(normal_draw(rng, 25.0, 12.0), 0.0, 511.0),
            serror: rng.gen_range(0.0..0.15),
            same_srv: rng.gen_range(0.5..1.0),
            diff_srv: rng.gen_range(0.0..0.3),
            dst_host_count: rng.gen_range(1..=255),
            dst_host_srv_count: rng.gen_range(1..=255),
            label: "normal",
            difficulty: rng.gen_range(15..=21),
        },
    );
}

struct RecordDraw<'a> {
    duration: u32,
    protocol: &'a str,
    service: &'a str,
    flag: &'a str,
    src_bytes: u32,
    dst_bytes: u32,
    logged_in: u32,
    count: u32,
    srv_count: u32,
    serror: f64,
    same_srv: f64,
    diff_srv: f64,
    dst_host_count: u32,
    dst_host_srv_count: u32,
    label: &'a str,
    difficulty: u32,
}

fn push_record(out: &mut String, r: &RecordDraw) {
    // 41 features, label, difficulty; rates carry two decimals like the
    // original files.
    writeln!(
        out,
        "{},{},{},{},{},{},0,0,0,0,0,{},0,0,0,0,0,0,0,0,0,0,{},{},{serror:.2},{serror:.2},0.00,0.00,{same:.2},{diff:.2},0.00,{},{},{same:.2},{diff:.2},0.00,0.00,{serror:.2},{serror:.2},0.00,0.00,{},{}",
        r.duration,
        r.protocol,
        r.service,
        r.flag,
        r.src_bytes,
        r.dst_bytes,
        r.logged_in,
        r.count,
        r.srv_count,
        r.dst_host_count,
        r.dst_host_srv_count,
        r.label,
        r.difficulty,
        serror = r.serror,
        same = r.same_srv,
        diff = r.diff_srv,
    )
    .expect("writing to a String cannot fail");
}
