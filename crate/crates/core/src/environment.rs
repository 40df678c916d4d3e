//! Quenched environments: per-site easy/difficult labels and square classification.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::lattice::{Coord, Dims, Rect};
use crate::rng::{self, STREAM_ENVIRONMENT};

/// Site percolation threshold on Z^2 (numerical literature value).
pub const P_SP: f64 = 0.592746;
/// Oriented site percolation threshold on Z^2 (numerical literature value).
pub const P_OP: f64 = 0.7055;

pub const DEFAULT_MAX_SIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Easy sites need one empty neighbour, difficult sites two.
    #[serde(rename = "fa12")]
    MixedFa,
    /// Easy sites follow FA1f, difficult sites the north-east rule.
    #[serde(rename = "ne-fa1f")]
    MixedNeFa1f,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::MixedFa => 0,
            ModelKind::MixedNeFa1f => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(ModelKind::MixedFa),
            1 => Some(ModelKind::MixedNeFa1f),
            _ => None,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa12" | "mixed-fa" | "mixedfa" => Ok(ModelKind::MixedFa),
            "ne-fa1f" | "nefa1f" | "mixed-ne-fa1f" => Ok(ModelKind::MixedNeFa1f),
            _ => Err(Error::Parameter(format!("unknown model kind {s:?} (fa12, ne-fa1f)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::MixedFa => "fa12",
            ModelKind::MixedNeFa1f => "ne-fa1f",
        })
    }
}

/// The kinetic rule a site obeys, derived from its label and the model kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteRule {
    /// At least `k` empty nearest neighbours.
    Threshold(u8),
    /// North and east neighbours both empty.
    NorthEast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub pi: f64,
    pub width: usize,
    pub height: usize,
    pub kind: ModelKind,
    pub seed: u64,
}

impl EnvParams {
    pub fn new(kind: ModelKind, pi: f64, width: usize, height: usize, seed: u64) -> Self {
        EnvParams { pi, width, height, kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::Parameter(format!("pi must lie in (0, 1], got {}", self.pi)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter(format!("window {}x{} has no sites", self.width, self.height)));
        }
        if self.width > u32::MAX as usize || self.height > u32::MAX as usize {
            return Err(Error::Parameter("window side exceeds u32".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub params: EnvParams,
    /// Row-major, 1 = easy, 0 = difficult.
    easy: Vec<u8>,
    /// Set once a label is changed by hand; such fields no longer regenerate.
    planted: bool,
}

/// Site `i` (row-major) is easy iff its keyed uniform falls below pi.
pub fn sample_environment(params: EnvParams) -> Result<Environment> {
    params.validate()?;
    let n = params.width * params.height;
    let easy = (0..n)
        .map(|i| u8::from(rng::site_uniform(params.seed, STREAM_ENVIRONMENT, i) < params.pi))
        .collect();
    Ok(Environment { params, easy, planted: false })
}

impl Environment {
    pub fn from_labels(params: EnvParams, easy: Vec<bool>) -> Result<Self> {
        params.validate()?;
        if easy.len() != params.width * params.height {
            return Err(Error::Parameter(format!(
                "{} labels for a {}x{} window",
                easy.len(),
                params.width,
                params.height
            )));
        }
        let easy = easy.into_iter().map(u8::from).collect();
        Ok(Environment { params, easy, planted: true })
    }

    pub fn uniform(kind: ModelKind, width: usize, height: usize, easy: bool) -> Result<Self> {
        let params = EnvParams::new(kind, if easy { 1.0 } else { 0.5 }, width, height, 0);
        Self::from_labels(params, vec![easy; width * height])
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind
    }

    pub fn dims(&self) -> Dims {
        self.params.dims()
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn len(&self) -> usize {
        self.easy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.easy.is_empty()
    }

    pub fn origin(&self) -> Coord {
        self.dims().origin()
    }

    pub fn is_planted(&self) -> bool {
        self.planted
    }

    #[inline]
    pub fn is_easy_index(&self, i: usize) -> bool {
        self.easy[i] != 0
    }

    #[inline]
    pub fn is_easy(&self, c: Coord) -> bool {
        self.easy[self.dims().index(c)] != 0
    }

    pub fn labels(&self) -> &[u8] {
        &self.easy
    }

    #[inline]
    pub fn rule_index(&self, i: usize) -> SiteRule {
        match (self.params.kind, self.easy[i] != 0) {
            (_, true) => SiteRule::Threshold(1),
            (ModelKind::MixedFa, false) => SiteRule::Threshold(2),
            (ModelKind::MixedNeFa1f, false) => SiteRule::NorthEast,
        }
    }

    pub fn rule(&self, c: Coord) -> SiteRule {
        self.rule_index(self.dims().index(c))
    }

    pub fn set_easy(&mut self, c: Coord, easy: bool) {
        let i = self.dims().index(c);
        self.easy[i] = u8::from(easy);
        self.planted = true;
    }

    /// Relabels every site of `rect` (clipped to the window).
    pub fn plant(&mut self, rect: Rect, easy: bool) {
        let r = rect.intersect(&self.dims().rect());
        for c in r.coords() {
            self.set_easy(c, easy);
        }
    }

    pub fn easy_fraction(&self) -> f64 {
        self.easy.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.len() as f64
    }

    /// Whether the stored labels equal a fresh draw from the stored parameters.
    pub fn regenerates(&self) -> bool {
        sample_environment(self.params).map(|e| e.easy == self.easy).unwrap_or(false)
    }

    /// Restriction to a sub-rectangle, as a standalone window.
    pub fn crop(&self, rect: Rect) -> Result<Environment> {
        self.dims().check_rect(&rect)?;
        let labels = rect.coords().map(|c| self.is_easy(c)).collect();
        let params = EnvParams { width: rect.w, height: rect.h, ..self.params };
        Environment::from_labels(params, labels)
    }

    /// FNV-1a over the canonical file encoding, as 16 hex digits.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.encode() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn is_good_square(&self, corner: Coord, side: usize) -> Result<bool> {
        let r = Rect::square(corner, side);
        self.dims().check_rect(&r)?;
        Ok(good_pattern(side, |u, v| self.is_easy(Coord::new(corner.x + u, corner.y + v))))
    }

    pub fn is_excellent_square(&self, corner: Coord, side: usize) -> Result<bool> {
        let r = Rect::square(corner, side);
        self.dims().check_rect(&r)?;
        Ok(excellent_pattern(side, |u, v| self.is_easy(Coord::new(corner.x + u, corner.y + v))))
    }
}

/// Every row and every column of the `side x side` pattern has an easy site.
pub(crate) fn good_pattern(side: usize, easy: impl Fn(usize, usize) -> bool) -> bool {
    let rows = (0..side).all(|v| (0..side).any(|u| easy(u, v)));
    rows && (0..side).all(|u| (0..side).any(|v| easy(u, v)))
}

/// With 0-based local coordinates: for each `1 <= i < side`, the column
/// segment `{i} x [0, i)` and the row segment `[0, i) x {i}` each have an easy site.
pub(crate) fn excellent_pattern(side: usize, easy: impl Fn(usize, usize) -> bool) -> bool {
    (1..side).all(|i| (0..i).any(|j| easy(i, j)) && (0..i).any(|j| easy(j, i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub trials: usize,
}

/// Bernoulli labels of trial `t` are drawn from `(seed, t)`-keyed streams.
pub fn estimate_good_probability(pi: f64, side: usize, trials: usize, seed: u64) -> Result<Estimate> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::Parameter(format!("pi must lie in (0, 1], got {pi}")));
    }
    if side == 0 || trials == 0 {
        return Err(Error::Parameter("side and trials must be positive".into()));
    }
    let n = side * side;
    let mut labels = vec![false; n];
    let mut hits = 0usize;
    for t in 0..trials {
        let ts = rng::trial_seed(seed, t as u64);
        for (k, l) in labels.iter_mut().enumerate() {
            *l = rng::site_uniform(ts, STREAM_ENVIRONMENT, k) < pi;
        }
        if good_pattern(side, |u, v| labels[v * side + u]) {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Ok(Estimate { value: p, se: (p * (1.0 - p) / trials as f64).sqrt(), trials })
}

/// Exact probability that an i.i.d. square is good, by inclusion-exclusion
/// over the set of all-difficult rows.
pub fn good_probability(pi: f64, side: usize) -> f64 {
    let d = 1.0 - pi;
    if d <= 0.0 {
        return 1.0;
    }
    let l = side as f64;
    let ln_choose = |k: usize| ln_gamma(l + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma(l - k as f64 + 1.0);
    let mut total = 0.0;
    for k in 0..=side {
        let col_ok = 1.0 - d.powi((side - k) as i32);
        let mag = ln_choose(k) + (k * side) as f64 * d.ln() + l * col_ok.ln();
        if mag.is_finite() {
            let term = mag.exp();
            total += if k % 2 == 0 { term } else { -term };
        }
    }
    total.clamp(0.0, 1.0)
}

/// Lower bound `1 - 2 L e^{-pi L}` on the goodness probability.
pub fn good_probability_lower_bound(pi: f64, side: usize) -> f64 {
    1.0 - 2.0 * side as f64 * (-pi * side as f64).exp()
}

/// Smallest side whose estimated goodness probability exceeds `P_SP + margin`.
pub fn min_good_l(pi: f64, margin: f64, precision: usize, seed: u64) -> Result<usize> {
    min_good_l_capped(pi, margin, precision, seed, DEFAULT_MAX_SIDE)
}

pub fn min_good_l_capped(pi: f64, margin: f64, precision: usize, seed: u64, max_side: usize) -> Result<usize> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Parameter(format!("pi must lie in (0, 1), got {pi}")));
    }
    let target = P_SP + margin;
    for side in 1..=max_side {
        if estimate_good_probability(pi, side, precision, seed ^ side as u64)?.value > target {
            return Ok(side);
        }
    }
    Err(Error::SearchFailed { max_side })
}

const MAGIC: &[u8; 4] = b"QKCE";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;
const FLAG_PLANTED: u8 = 1;

impl Environment {
    /// 32-byte little-endian header followed by one label byte per site.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.params.kind.tag());
        out.push(if self.planted { FLAG_PLANTED } else { 0 });
        out.extend_from_slice(&(self.params.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.height as u32).to_le_bytes());
        out.extend_from_slice(&self.params.pi.to_bits().to_le_bytes());
        out.extend_from_slice(&self.params.seed.to_le_bytes());
        out.extend_from_slice(&self.easy);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Environment> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_tag(bytes[6]).ok_or_else(|| Error::Format(format!("unknown kind tag {}", bytes[6])))?;
        let flags = bytes[7];
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let width = u32_at(8);
        let height = u32_at(12);
        let pi = f64::from_bits(u64_at(16));
        let seed = u64_at(24);
        let params = EnvParams { pi, width, height, kind, seed };
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != width * height {
            return Err(Error::Format(format!(
                "{} label bytes for a {width}x{height} window",
                body.len()
            )));
        }
        if let Some(b) = body.iter().find(|&&b| b > 1) {
            return Err(Error::Format(format!("label byte {b} is not 0 or 1")));
        }
        Ok(Environment { params, easy: body.to_vec(), planted: flags & FLAG_PLANTED != 0 })
    }
}

pub fn save_environment(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, env.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Environment::decode(&bytes)
}
