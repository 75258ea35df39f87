//! Backbone + branch architectures as module schedules, the channel scaling
//! rule used to lighten branches, and per-route FLOP accounting.
//!
//! FLOP convention: one multiply-add counts as 2 FLOPs. A block of
//! `convs_per_block` square convolutions is charged
//! `2 * kernel^2 * in_channels * out_channels * height * width` per
//! convolution; the inner convolutions of a block are charged with the same
//! `in_channels * out_channels` product as the first one. Biases, activations,
//! normalizations and upsampling layers are not counted.

mod fixture;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixture::{ArchFixture, BranchSection};

/// One convolutional block of a backbone or branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub in_channels: u32,
    pub out_channels: u32,
    pub height: u32,
    pub width: u32,
    pub kernel: u32,
    pub convs_per_block: u32,
}

impl ModuleSpec {
    pub fn new(
        in_channels: u32,
        out_channels: u32,
        height: u32,
        width: u32,
        kernel: u32,
        convs_per_block: u32,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            height,
            width,
            kernel,
            convs_per_block,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("height", self.height),
            ("width", self.width),
            ("kernel", self.kernel),
            ("convs_per_block", self.convs_per_block),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Argument(format!(
                    "module field `{name}` must be >= 1"
                )));
            }
        }
        Ok(())
    }
}

/// A scale factor kept as an exact fraction `num / den` in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScaleFactor {
    num: u32,
    den: u32,
}

impl ScaleFactor {
    pub const ONE: ScaleFactor = ScaleFactor { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Argument(format!(
                "scale factor {num}/{den} must lie in (0, 1]"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ScaleFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse scale factor `{s}` (expected `a/b`)"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n = n.trim().parse().map_err(|_| bad())?;
                let d = d.trim().parse().map_err(|_| bad())?;
                ScaleFactor::new(n, d)
            }
            None => ScaleFactor::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl TryFrom<String> for ScaleFactor {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScaleFactor> for String {
    fn from(s: ScaleFactor) -> String {
        s.to_string()
    }
}

/// How branch widths are reduced.
///
/// `width_quantum`, when set, snaps the scale factor onto the grid
/// `j / width_quantum` (round half away from zero) before it is applied.
/// Architectures whose widths are multiples of a base width scale that base
/// width rather than each layer independently; with a quantum of 64 and
/// s = 1/3 every width is multiplied by 21/64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalePolicy {
    pub scale_factor: ScaleFactor,
    pub min_channels: u32,
    #[serde(default)]
    pub width_quantum: Option<u32>,
}

impl ScalePolicy {
    pub fn new(scale_factor: ScaleFactor, min_channels: u32) -> Result<Self> {
        if min_channels == 0 {
            return Err(Error::Argument("min_channels must be >= 1".into()));
        }
        Ok(Self {
            scale_factor,
            min_channels,
            width_quantum: None,
        })
    }

    pub fn with_width_quantum(mut self, quantum: u32) -> Result<Self> {
        if quantum == 0 {
            return Err(Error::Argument("width quantum must be >= 1".into()));
        }
        self.width_quantum = Some(quantum);
        Ok(self)
    }

    /// The factor actually applied, as `(num, den)`.
    pub fn effective_factor(&self) -> (u64, u64) {
        let (num, den) = (
            u64::from(self.scale_factor.num),
            u64::from(self.scale_factor.den),
        );
        match self.width_quantum {
            Some(q) => {
                let q = u64::from(q);
                (round_ratio(q * num, den).max(1), q)
            }
            None => (num, den),
        }
    }
}

/// `round(a / b)` for non-negative integers, halves away from zero.
fn round_ratio(a: u64, b: u64) -> u64 {
    (2 * a + b) / (2 * b)
}

/// Scaled width of a `c`-channel layer. Widths at or below the floor are left
/// untouched; wider layers are scaled and clamped up to the floor.
pub fn scale_channels(c: u32, policy: &ScalePolicy) -> u32 {
    if c <= policy.min_channels {
        return c;
    }
    let (num, den) = policy.effective_factor();
    // effective factor is <= 1, so this fits back into u32
    let scaled = round_ratio(u64::from(c) * num, den) as u32;
    scaled.max(policy.min_channels)
}

/// Build the branch attached after backbone module `attach_index` (1-based).
///
/// The branch mirrors backbone modules `attach_index + 1 ..= N`: spatial dims,
/// kernels and conv counts are copied, output widths go through
/// [`scale_channels`]. The first module reads the unscaled backbone feature.
pub fn build_branch_schedule(
    backbone: &[ModuleSpec],
    attach_index: usize,
    policy: &ScalePolicy,
) -> Result<Vec<ModuleSpec>> {
    let n = backbone.len();
    if n < 2 || attach_index < 1 || attach_index > n - 1 {
        return Err(Error::Range {
            what: "attach_index",
            value: attach_index as i64,
            min: 1,
            max: n as i64 - 1,
        });
    }
    let mut in_channels = backbone[attach_index - 1].out_channels;
    let branch = backbone[attach_index..]
        .iter()
        .map(|m| {
            let out_channels = scale_channels(m.out_channels, policy);
            let spec = ModuleSpec {
                in_channels,
                out_channels,
                ..*m
            };
            in_channels = out_channels;
            spec
        })
        .collect();
    Ok(branch)
}

/// 2 * k^2 * c_in * c_out * H * W * convs, saturating at `u64::MAX`.
pub fn flops_of_module(m: &ModuleSpec) -> u64 {
    [
        m.kernel,
        m.kernel,
        m.in_channels,
        m.out_channels,
        m.height,
        m.width,
        m.convs_per_block,
    ]
    .iter()
    .fold(2u64, |acc, &f| acc.saturating_mul(u64::from(f)))
}

/// Identifies a computational route: a branch (numbered from 1 in attach
/// order) or the full backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExitId {
    Branch(u32),
    Backbone,
}

impl ExitId {
    /// Position in routing order: branches are 1..=B, the backbone is B + 1.
    pub fn ordinal(&self, branch_count: usize) -> usize {
        match self {
            ExitId::Branch(b) => *b as usize,
            ExitId::Backbone => branch_count + 1,
        }
    }
}

impl fmt::Display for ExitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitId::Branch(b) => write!(f, "{b}"),
            ExitId::Backbone => f.write_str("backbone"),
        }
    }
}

impl FromStr for ExitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "backbone" | "bb" | "BB" => Ok(ExitId::Backbone),
            other => other
                .parse()
                .map(ExitId::Branch)
                .map_err(|_| Error::Lookup(format!("exit id `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub attach_index: usize,
    pub modules: Vec<ModuleSpec>,
}

/// A backbone with its attached branches. Construction checks the depth rule
/// and the channel hand-off at every attach point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteGraph {
    backbone: Vec<ModuleSpec>,
    branches: Vec<Branch>,
}

impl RouteGraph {
    pub fn new(backbone: Vec<ModuleSpec>, branches: Vec<Branch>) -> Result<Self> {
        let n = backbone.len();
        if n == 0 {
            return Err(Error::Schema("backbone has no modules".into()));
        }
        for m in &backbone {
            m.validate()?;
        }
        let mut prev_attach = 0;
        for (i, br) in branches.iter().enumerate() {
            let id = i + 1;
            let k = br.attach_index;
            if k < 1 || k + 1 > n {
                return Err(Error::Range {
                    what: "attach_index",
                    value: k as i64,
                    min: 1,
                    max: n as i64 - 1,
                });
            }
            if k <= prev_attach {
                return Err(Error::Schema(format!(
                    "branch {id}: attach points must be strictly increasing"
                )));
            }
            prev_attach = k;
            if k + br.modules.len() != n {
                return Err(Error::Schema(format!(
                    "branch {id}: attach {k} + length {} != backbone depth {n}",
                    br.modules.len()
                )));
            }
            for m in &br.modules {
                m.validate()?;
            }
            let feature = backbone[k - 1].out_channels;
            if br.modules[0].in_channels != feature {
                return Err(Error::Schema(format!(
                    "branch {id}: first module reads {} channels, backbone module {k} emits {feature}",
                    br.modules[0].in_channels
                )));
            }
        }
        Ok(Self { backbone, branches })
    }

    /// Attach a generated branch after each module in `attach_points`.
    pub fn with_policy(
        backbone: Vec<ModuleSpec>,
        attach_points: &[usize],
        policy: &ScalePolicy,
    ) -> Result<Self> {
        let branches = attach_points
            .iter()
            .map(|&k| {
                Ok(Branch {
                    attach_index: k,
                    modules: build_branch_schedule(&backbone, k, policy)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(backbone, branches)
    }

    pub fn backbone(&self) -> &[ModuleSpec] {
        &self.backbone
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, id: u32) -> Option<&Branch> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.branches.get(i))
    }

    pub fn exit_ids(&self) -> Vec<ExitId> {
        (1..=self.branches.len() as u32)
            .map(ExitId::Branch)
            .chain(std::iter::once(ExitId::Backbone))
            .collect()
    }
}

fn sum_flops<'a>(modules: impl IntoIterator<Item = &'a ModuleSpec>) -> u64 {
    modules
        .into_iter()
        .fold(0u64, |acc, m| acc.saturating_add(flops_of_module(m)))
}

/// FLOPs spent producing an output at `exit`.
pub fn route_cost(graph: &RouteGraph, exit: ExitId) -> Result<u64> {
    match exit {
        ExitId::Backbone => Ok(sum_flops(&graph.backbone)),
        ExitId::Branch(id) => {
            let br = graph
                .branch(id)
                .ok_or_else(|| Error::Lookup(format!("exit id {id}")))?;
            let trunk = sum_flops(&graph.backbone[..br.attach_index]);
            Ok(trunk.saturating_add(sum_flops(&br.modules)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// `(branch id, flops)`, ascending by id.
    pub per_exit_flops: Vec<(u32, u64)>,
    pub backbone_flops: u64,
}

impl CostReport {
    pub fn for_graph(graph: &RouteGraph) -> Self {
        let per_exit_flops = (1..=graph.branches.len() as u32)
            .map(|id| (id, route_cost(graph, ExitId::Branch(id)).expect("valid id")))
            .collect();
        Self {
            per_exit_flops,
            backbone_flops: sum_flops(&graph.backbone),
        }
    }

    /// Every route, backbone last.
    pub fn routes(&self) -> impl Iterator<Item = (ExitId, u64)> + '_ {
        self.per_exit_flops
            .iter()
            .map(|&(id, f)| (ExitId::Branch(id), f))
            .chain(std::iter::once((ExitId::Backbone, self.backbone_flops)))
    }
}

/// Saved computation per unit of quality loss: the negated least-squares
/// slope of mean cost against threshold.
pub fn savings_slope(sweep: &[(f64, f64)]) -> Result<f64> {
    if sweep.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 sweep points, got {}",
            sweep.len()
        )));
    }
    let n = sweep.len() as f64;
    let mean_t = sweep.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_c = sweep.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = sweep.iter().fold((0.0, 0.0), |(sxy, sxx), &(t, c)| {
        let dt = t - mean_t;
        (sxy + dt * (c - mean_c), sxx + dt * dt)
    });
    if sxx == 0.0 {
        return Err(Error::Degenerate("all thresholds are equal".into()));
    }
    let slope = -sxy / sxx;
    // avoid reporting -0 for a flat sweep
    Ok(if slope == 0.0 { 0.0 } else { slope })
}

/// Architecture shaped like the semantic-image synthesis generator: six
/// residual blocks doubling resolution from 8x16, branches after blocks 1-4.
pub fn oasis_fixture() -> ArchFixture {
    ArchFixture::parse_str(include_str!("../../fixtures/oasis.arch"), "oasis.arch")
        .expect("bundled fixture parses")
}

/// Architecture shaped like the head-avatar renderer: nine residual blocks,
/// branches after blocks 2, 4 and 6.
pub fn megaportraits_fixture() -> ArchFixture {
    ArchFixture::parse_str(
        include_str!("../../fixtures/megaportraits.arch"),
        "megaportraits.arch",
    )
    .expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(n: u32, d: u32) -> ScaleFactor {
        ScaleFactor::new(n, d).unwrap()
    }

    fn policy(n: u32, d: u32, m: u32) -> ScalePolicy {
        ScalePolicy::new(sf(n, d), m).unwrap()
    }

    #[test]
    fn scale_channels_examples() {
        assert_eq!(scale_channels(128, &policy(1, 3, 64)), 64);
        assert_eq!(scale_channels(64, &policy(1, 2, 64)), 64);
        assert_eq!(scale_channels(512, &policy(1, 2, 64)), 256);
        // below the floor nothing happens even for tiny factors
        assert_eq!(scale_channels(10, &policy(1, 15, 24)), 10);
    }

    #[test]
    fn plain_rounding_is_half_away_from_zero() {
        // 1024 / 3 = 341.33, 170 / 4 = 42.5
        assert_eq!(scale_channels(1024, &policy(1, 3, 64)), 341);
        assert_eq!(scale_channels(170, &policy(1, 4, 24)), 43);
        assert_eq!(scale_channels(6, &policy(1, 4, 1)), 2);
    }

    #[test]
    fn width_quantum_snaps_the_factor() {
        let p = policy(1, 3, 64).with_width_quantum(64).unwrap();
        assert_eq!(p.effective_factor(), (21, 64));
        assert_eq!(scale_channels(1024, &p), 336);
        assert_eq!(scale_channels(512, &p), 168);
        assert_eq!(scale_channels(256, &p), 84);
        assert_eq!(scale_channels(128, &p), 64);
        let half = policy(1, 2, 64).with_width_quantum(64).unwrap();
        assert_eq!(half.effective_factor(), (32, 64));
    }

    #[test]
    fn scale_factor_parsing() {
        assert_eq!("1/4".parse::<ScaleFactor>().unwrap(), sf(1, 4));
        assert_eq!(" 1 ".parse::<ScaleFactor>().unwrap(), ScaleFactor::ONE);
        assert!("3/2".parse::<ScaleFactor>().is_err());
        assert!("0/2".parse::<ScaleFactor>().is_err());
        assert!("x".parse::<ScaleFactor>().is_err());
        assert_eq!(sf(1, 15).to_string(), "1/15");
    }

    fn chain(widths: &[u32]) -> Vec<ModuleSpec> {
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ModuleSpec::new(w[0], w[1], 4 << i, 4 << i, 3, 2).unwrap())
            .collect()
    }

    #[test]
    fn branch_length_follows_depth_rule() {
        let bb = chain(&[8, 8, 8, 8, 8, 8, 8]);
        let br = build_branch_schedule(&bb, 4, &policy(1, 2, 1)).unwrap();
        assert_eq!(br.len(), 2);
        assert_eq!(br[0].in_channels, 8);
        assert_eq!(br[0].height, bb[4].height);
    }

    #[test]
    fn branch_attach_out_of_range() {
        let bb = chain(&[8, 8, 8]);
        for k in [0, 2, 7] {
            assert!(matches!(
                build_branch_schedule(&bb, k, &policy(1, 2, 1)),
                Err(Error::Range { .. })
            ));
        }
    }

    #[test]
    fn flops_examples() {
        let m = ModuleSpec::new(2, 4, 8, 8, 3, 1).unwrap();
        assert_eq!(flops_of_module(&m), 9216);
        let unit = ModuleSpec::new(1, 1, 1, 1, 1, 1).unwrap();
        assert_eq!(flops_of_module(&unit), 2);
    }

    #[test]
    fn module_spec_rejects_zero_fields() {
        assert!(ModuleSpec::new(0, 1, 1, 1, 1, 1).is_err());
        assert!(ModuleSpec::new(1, 1, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn route_cost_cheap_tail_is_below_backbone() {
        let bb = chain(&[64, 64, 64, 64]);
        let tail = vec![ModuleSpec::new(64, 1, bb[2].height, bb[2].width, 1, 1).unwrap()];
        let g = RouteGraph::new(
            bb,
            vec![Branch {
                attach_index: 2,
                modules: tail,
            }],
        )
        .unwrap();
        let full = route_cost(&g, ExitId::Backbone).unwrap();
        let early = route_cost(&g, ExitId::Branch(1)).unwrap();
        assert!(early < full);
        let expected: u64 = g.backbone().iter().map(flops_of_module).sum();
        assert_eq!(full, expected);
        assert!(matches!(
            route_cost(&g, ExitId::Branch(2)),
            Err(Error::Lookup(_))
        ));
        assert!(matches!(
            route_cost(&g, ExitId::Branch(0)),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn graph_rejects_depth_and_channel_violations() {
        let bb = chain(&[16, 16, 16, 16]);
        let short = Branch {
            attach_index: 1,
            modules: vec![ModuleSpec::new(16, 8, 8, 8, 3, 1).unwrap()],
        };
        assert!(matches!(
            RouteGraph::new(bb.clone(), vec![short]),
            Err(Error::Schema(_))
        ));
        let wrong_in = Branch {
            attach_index: 2,
            modules: vec![ModuleSpec::new(9, 8, 8, 8, 3, 1).unwrap()],
        };
        assert!(matches!(
            RouteGraph::new(bb, vec![wrong_in]),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn savings_slope_examples() {
        let s = savings_slope(&[(0.0, 1000.0), (0.1, 900.0)]).unwrap();
        assert!((s - 1000.0).abs() < 1e-9);
        assert_eq!(
            savings_slope(&[(0.0, 5.0), (0.1, 5.0), (0.3, 5.0)]).unwrap(),
            0.0
        );
        assert!(matches!(
            savings_slope(&[(0.1, 1.0)]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            savings_slope(&[(0.1, 1.0), (0.1, 2.0)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn exit_id_text_roundtrip() {
        for e in [ExitId::Branch(3), ExitId::Backbone] {
            assert_eq!(e.to_string().parse::<ExitId>().unwrap(), e);
        }
        assert!("x".parse::<ExitId>().is_err());
    }

    #[test]
    fn bundled_fixtures_build() {
        let p = policy(1, 4, 64);
        let g = oasis_fixture().to_graph(&p).unwrap();
        assert_eq!(g.backbone().len(), 6);
        assert_eq!(g.branches().len(), 4);
        let g = megaportraits_fixture()
            .to_graph(&policy(1, 15, 24))
            .unwrap();
        assert_eq!(g.backbone().len(), 9);
        let lens: Vec<_> = g.branches().iter().map(|b| b.modules.len()).collect();
        assert_eq!(lens, vec![7, 5, 3]);
    }
}
