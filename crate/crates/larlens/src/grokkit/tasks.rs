//! Binary-operation tasks and dataset construction.
//!
//! Twelve operations over a finite carrier: nine modular-arithmetic tasks
//! over Z_p (p prime) and three over the symmetric group S₅ (carrier size
//! 120). Every equation is encoded as four tokens ⟨a⟩⟨op⟩⟨b⟩⟨=⟩ with the
//! answer c as the prediction target, over a vocabulary of carrier + 2
//! symbols (one op token, one "=" token).
//!
//! S₅ elements are indexed by the lexicographic rank of their permutation
//! tuple (Lehmer code), so the vocabulary is deterministic.

use super::GrokError;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Tokens per equation: ⟨a⟩⟨op⟩⟨b⟩⟨=⟩.
pub const SEQ_LEN: usize = 4;
/// Carrier size of the S₅ tasks (|S₅| = 5! = 120).
pub const S5_ORDER: u64 = 120;

// ───────────────────────────── task ids ────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    /// x + y (mod p)
    Add,
    /// x − y (mod p)
    Sub,
    /// x / y (mod p), y ≠ 0
    Div,
    /// x / y if y is odd, else x − y (mod p)
    DivOddSub,
    /// x² + y² (mod p)
    X2Y2,
    /// x² + xy + y² (mod p)
    X2XyY2,
    /// x² + xy + y² + x (mod p)
    X2XyY2X,
    /// x³ + xy (mod p)
    X3Xy,
    /// x³ + xy² + y (mod p)
    X3Xy2Y,
    /// x·y in S₅
    S5Compose,
    /// x·y·x⁻¹ in S₅
    S5Conjugate,
    /// x·y·x in S₅
    S5Sandwich,
}

impl TaskId {
    pub const ALL: [TaskId; 12] = [
        TaskId::Add,
        TaskId::Sub,
        TaskId::Div,
        TaskId::DivOddSub,
        TaskId::X2Y2,
        TaskId::X2XyY2,
        TaskId::X2XyY2X,
        TaskId::X3Xy,
        TaskId::X3Xy2Y,
        TaskId::S5Compose,
        TaskId::S5Conjugate,
        TaskId::S5Sandwich,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Add => "add",
            TaskId::Sub => "sub",
            TaskId::Div => "div",
            TaskId::DivOddSub => "div-odd-sub",
            TaskId::X2Y2 => "x2-y2",
            TaskId::X2XyY2 => "x2-xy-y2",
            TaskId::X2XyY2X => "x2-xy-y2-x",
            TaskId::X3Xy => "x3-xy",
            TaskId::X3Xy2Y => "x3-xy2-y",
            TaskId::S5Compose => "s5-compose",
            TaskId::S5Conjugate => "s5-conjugate",
            TaskId::S5Sandwich => "s5-sandwich",
        }
    }

    /// Human-readable operation the name abbreviates.
    pub fn formula(self) -> &'static str {
        match self {
            TaskId::Add => "x + y (mod p)",
            TaskId::Sub => "x - y (mod p)",
            TaskId::Div => "x / y (mod p), y != 0",
            TaskId::DivOddSub => "x / y if y odd else x - y (mod p)",
            TaskId::X2Y2 => "x^2 + y^2 (mod p)",
            TaskId::X2XyY2 => "x^2 + xy + y^2 (mod p)",
            TaskId::X2XyY2X => "x^2 + xy + y^2 + x (mod p)",
            TaskId::X3Xy => "x^3 + xy (mod p)",
            TaskId::X3Xy2Y => "x^3 + xy^2 + y (mod p)",
            TaskId::S5Compose => "x*y in S5",
            TaskId::S5Conjugate => "x*y*x^-1 in S5",
            TaskId::S5Sandwich => "x*y*x in S5",
        }
    }

    pub fn is_s5(self) -> bool {
        matches!(self, TaskId::S5Compose | TaskId::S5Conjugate | TaskId::S5Sandwich)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL.iter().copied().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = TaskId::ALL.iter().map(|t| t.name()).collect();
            format!("unknown task {s:?}; expected one of {}", names.join(", "))
        })
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

// ───────────────────────────── task spec ───────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    /// Carrier size: a prime p for modular tasks, exactly 120 for S₅.
    pub modulus: u64,
    /// Fraction of all equations used for training, in (0, 1).
    pub train_fraction: f64,
}

impl TaskSpec {
    pub fn new(task_id: TaskId, modulus: u64, train_fraction: f64) -> Result<Self, GrokError> {
        let spec = TaskSpec { task_id, modulus, train_fraction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GrokError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GrokError::InvalidTask {
                detail: format!("train_fraction must be in (0, 1), got {}", self.train_fraction),
            });
        }
        if self.task_id.is_s5() {
            if self.modulus != S5_ORDER {
                return Err(GrokError::InvalidTask {
                    detail: format!(
                        "{} runs on S5, so modulus must be {S5_ORDER}, got {}",
                        self.task_id, self.modulus
                    ),
                });
            }
        } else if !is_prime(self.modulus) {
            return Err(GrokError::InvalidTask {
                detail: format!("{} needs a prime modulus, got {}", self.task_id, self.modulus),
            });
        }
        Ok(())
    }

    /// Vocabulary size: carrier elements plus the op and "=" tokens.
    pub fn vocab(&self) -> usize {
        self.modulus as usize + 2
    }

    pub fn op_token(&self) -> u32 {
        self.modulus as u32
    }

    pub fn eq_token(&self) -> u32 {
        self.modulus as u32 + 1
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

// ───────────────────────────── modular arithmetic ──────────────────

fn mod_pow(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p;
        }
        base = base * base % p;
        exp >>= 1;
    }
    acc
}

/// Multiplicative inverse mod prime p via Fermat: y⁻¹ = y^(p−2).
fn mod_inv(y: u64, p: u64) -> u64 {
    debug_assert!(y % p != 0, "zero has no inverse");
    mod_pow(y, p - 2, p)
}

// ───────────────────────────── S₅ machinery ────────────────────────

const FACTORIALS: [u64; 6] = [1, 1, 2, 6, 24, 120];

/// Permutation of {0..4} → its lexicographic rank in 0..119 (Lehmer code).
pub fn s5_rank(perm: &[u8; 5]) -> u64 {
    let mut rank = 0u64;
    for i in 0..5 {
        let smaller_later =
            perm[i + 1..].iter().filter(|&&v| v < perm[i]).count() as u64;
        rank += smaller_later * FACTORIALS[4 - i];
    }
    rank
}

/// Inverse of [`s5_rank`]: rank in 0..119 → permutation tuple.
pub fn s5_unrank(mut rank: u64) -> [u8; 5] {
    debug_assert!(rank < S5_ORDER);
    let mut pool: Vec<u8> = (0..5).collect();
    let mut perm = [0u8; 5];
    for i in 0..5 {
        let f = FACTORIALS[4 - i];
        let idx = (rank / f) as usize;
        rank %= f;
        perm[i] = pool.remove(idx);
    }
    perm
}

/// Group operation: (a·b)(i) = a(b(i)) — apply b first, then a.
fn s5_mul(a: &[u8; 5], b: &[u8; 5]) -> [u8; 5] {
    let mut out = [0u8; 5];
    for i in 0..5 {
        out[i] = a[b[i] as usize];
    }
    out
}

fn s5_inv(a: &[u8; 5]) -> [u8; 5] {
    let mut out = [0u8; 5];
    for i in 0..5 {
        out[a[i] as usize] = i as u8;
    }
    out
}

// ───────────────────────────── the operation table ─────────────────

/// Evaluates x ∘ y for the task, or `None` where the operation is undefined
/// (division by zero), in which case the equation is excluded from the
/// dataset.
pub fn apply_task(task: TaskId, x: u64, y: u64, p: u64) -> Option<u64> {
    match task {
        TaskId::Add => Some((x + y) % p),
        TaskId::Sub => Some((x + p - y) % p),
        TaskId::Div => {
            if y == 0 {
                None
            } else {
                Some(x * mod_inv(y, p) % p)
            }
        }
        TaskId::DivOddSub => {
            // Odd y is never zero, so the division branch is total.
            if y % 2 == 1 {
                Some(x * mod_inv(y, p) % p)
            } else {
                Some((x + p - y) % p)
            }
        }
        TaskId::X2Y2 => Some((x * x + y * y) % p),
        TaskId::X2XyY2 => Some((x * x + x * y + y * y) % p),
        TaskId::X2XyY2X => Some((x * x + x * y + y * y + x) % p),
        TaskId::X3Xy => Some((mod_pow(x, 3, p) + x * y) % p),
        TaskId::X3Xy2Y => Some((mod_pow(x, 3, p) + x * (y * y % p) + y) % p),
        TaskId::S5Compose => {
            let (a, b) = (s5_unrank(x), s5_unrank(y));
            Some(s5_rank(&s5_mul(&a, &b)))
        }
        TaskId::S5Conjugate => {
            let (a, b) = (s5_unrank(x), s5_unrank(y));
            Some(s5_rank(&s5_mul(&s5_mul(&a, &b), &s5_inv(&a))))
        }
        TaskId::S5Sandwich => {
            let (a, b) = (s5_unrank(x), s5_unrank(y));
            Some(s5_rank(&s5_mul(&s5_mul(&a, &b), &a)))
        }
    }
}

// ───────────────────────────── dataset ─────────────────────────────

/// One equation: the four prompt tokens and the answer token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub tokens: [u32; SEQ_LEN],
    pub target: u32,
}

/// Enumerates every defined equation x ∘ y (x-major order), shuffles them
/// with stream 1 of the seed, and takes the first ⌊fraction·total⌋ as the
/// train set; the complement is validation. Deterministic per seed.
pub fn build_dataset(
    task: &TaskSpec,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), GrokError> {
    task.validate()?;
    let p = task.modulus;
    let op = task.op_token();
    let eq = task.eq_token();

    let mut all: Vec<Example> = Vec::with_capacity((p * p) as usize);
    for x in 0..p {
        for y in 0..p {
            if let Some(c) = apply_task(task.task_id, x, y, p) {
                all.push(Example {
                    tokens: [x as u32, op, y as u32, eq],
                    target: c as u32,
                });
            }
        }
    }

    let train_size = (task.train_fraction * all.len() as f64).floor() as usize;
    if train_size == 0 || train_size == all.len() {
        return Err(GrokError::InvalidTask {
            detail: format!(
                "train_fraction {} leaves an empty split over {} equations",
                task.train_fraction,
                all.len()
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    all.shuffle(&mut rng);

    let val = all.split_off(train_size);
    Ok((all, val))
}
