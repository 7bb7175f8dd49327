//! Optimal formation position sequences (OFPS) and formation-error metrics.
//!
//! For agent `i` and each future timestamp, the peers' predicted positions
//! are registered onto their desired formation positions. The fitted
//! current→desired similarity is inverted and applied to agent `i`'s own
//! desired position, which yields the world-frame point agent `i` should
//! occupy for the swarm to best match the formation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{align_closed_form, residual_norm_sum, GeometryError, Point3, Sim3Transform};
use crate::robust::{ransac_register, RansacConfig, RansacError, RobustRegistration};
use crate::trajectory::PolyTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("no peer trajectories available")]
    EmptyPeerSet,
    #[error("sample count must be at least 1 and horizon positive")]
    InvalidHorizon,
    #[error("registration failed at frame {frame}: {source}")]
    RegistrationFailed { frame: usize, source: RansacError },
    #[error("agent {0} is not part of the formation")]
    UnknownAgent(AgentId),
    #[error("need at least 3 agents, got {0}")]
    TooFewAgents(usize),
    #[error("formation positions are collinear or coincident")]
    DegenerateConfiguration,
    #[error("alternating minimization did not converge in {0} rounds")]
    NonConvergence(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Desired formation positions keyed by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    pub name: String,
    desired: BTreeMap<AgentId, Point3>,
}

impl FormationSpec {
    pub fn new(name: impl Into<String>, desired: BTreeMap<AgentId, Point3>) -> Result<Self, FormationError> {
        if desired.len() < 3 {
            return Err(FormationError::TooFewAgents(desired.len()));
        }
        let pts: Vec<Point3> = desired.values().copied().collect();
        if align_closed_form(&pts, &pts, None).is_err() {
            return Err(FormationError::DegenerateConfiguration);
        }
        Ok(Self {
            name: name.into(),
            desired,
        })
    }

    /// Assigns ids `0..n` in order.
    pub fn from_points(name: impl Into<String>, points: &[Point3]) -> Result<Self, FormationError> {
        let desired = points
            .iter()
            .enumerate()
            .map(|(i, p)| (AgentId(i as u32), *p))
            .collect();
        Self::new(name, desired)
    }

    pub fn desired(&self) -> &BTreeMap<AgentId, Point3> {
        &self.desired
    }

    pub fn position(&self, id: AgentId) -> Option<&Point3> {
        self.desired.get(&id)
    }

    pub fn len(&self) -> usize {
        self.desired.len()
    }

    pub fn is_empty(&self) -> bool {
        self.desired.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.desired.keys().copied()
    }

    pub fn centroid(&self) -> Point3 {
        self.desired.values().sum::<Vector3<f64>>() / self.desired.len() as f64
    }

    /// Restriction to `ids`; fails if the subset is not a valid formation.
    pub fn subset(&self, ids: &BTreeSet<AgentId>) -> Result<Self, FormationError> {
        let desired = self
            .desired
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .map(|(id, p)| (*id, *p))
            .collect();
        Self::new(self.name.clone(), desired)
    }
}

/// Peer positions at one future timestamp (the planning agent excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct PositionFrame {
    pub timestamp_index: usize,
    pub time: f64,
    pub positions: BTreeMap<AgentId, Point3>,
}

/// Optimal formation position sequence of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Ofps {
    pub agent_id: AgentId,
    pub times: Vec<f64>,
    pub points: Vec<Point3>,
    /// Desired-frame → world-frame maps; `points[m] = transforms[m](desired)`.
    pub transforms: Vec<Sim3Transform>,
    pub inlier_masks: Vec<Vec<bool>>,
    /// Peer ids in mask order, per frame.
    pub peer_ids: Vec<Vec<AgentId>>,
}

impl Ofps {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fitted current→desired registration of frame `m`.
    pub fn registration(&self, m: usize) -> Sim3Transform {
        self.transforms[m].inverse()
    }

    pub fn mean_inlier_fraction(&self) -> f64 {
        if self.inlier_masks.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .inlier_masks
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count() as f64 / m.len().max(1) as f64)
            .sum();
        sum / self.inlier_masks.len() as f64
    }

    /// Translates every frame by `offset(m)`, keeping points and transforms
    /// consistent.
    pub fn shifted(&self, offset: impl Fn(usize) -> Vector3<f64>) -> Ofps {
        let mut out = self.clone();
        for m in 0..out.points.len() {
            let d = offset(m);
            out.points[m] += d;
            out.transforms[m].translation += d;
        }
        out
    }
}

/// How an own desired point is mapped through a fitted registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameConvention {
    /// Apply the inverse of the current→desired fit: world-frame point.
    World,
    /// Apply the current→desired fit directly: lands in the desired frame.
    AsPrinted,
}

pub fn ofp_from_registration(
    registration: &Sim3Transform,
    own_desired: &Point3,
    convention: FrameConvention,
) -> Point3 {
    match convention {
        FrameConvention::World => registration.inverse().apply(own_desired),
        FrameConvention::AsPrinted => registration.apply(own_desired),
    }
}

/// Evaluates every peer at `M_c + 1` uniform timestamps over the horizon.
/// Trajectories are held at their start state before they begin and
/// continued with their final velocity after they end.
pub fn sample_peer_frames(
    peers: &BTreeMap<AgentId, PolyTrajectory>,
    t0: f64,
    horizon: f64,
    samples: usize,
) -> Result<Vec<PositionFrame>, FormationError> {
    if peers.is_empty() {
        return Err(FormationError::EmptyPeerSet);
    }
    if samples == 0 || !(horizon >= 0.0) {
        return Err(FormationError::InvalidHorizon);
    }
    Ok((0..=samples)
        .map(|m| {
            let time = t0 + m as f64 * horizon / samples as f64;
            PositionFrame {
                timestamp_index: m,
                time,
                positions: peers
                    .iter()
                    .map(|(id, traj)| (*id, traj.eval_extended(time, 0)))
                    .collect(),
            }
        })
        .collect())
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Robust registration of one frame: peers (ordered by id) onto their
/// desired positions.
pub fn register_frame(
    agent_id: AgentId,
    spec: &FormationSpec,
    frame: &PositionFrame,
    cfg: &RansacConfig,
) -> Result<(RobustRegistration, Vec<AgentId>), FormationError> {
    let mut ids = Vec::with_capacity(frame.positions.len());
    let mut src = Vec::with_capacity(frame.positions.len());
    let mut dst = Vec::with_capacity(frame.positions.len());
    for (id, p) in &frame.positions {
        if *id == agent_id {
            continue;
        }
        let d = spec.position(*id).ok_or(FormationError::UnknownAgent(*id))?;
        ids.push(*id);
        src.push(*p);
        dst.push(*d);
    }
    let cfg = cfg.with_seed(frame_seed(cfg.rng_seed, frame.timestamp_index));
    let reg = ransac_register(&src, &dst, &cfg).map_err(|source| FormationError::RegistrationFailed {
        frame: frame.timestamp_index,
        source,
    })?;
    Ok((reg, ids))
}

pub fn compute_ofps(
    agent_id: AgentId,
    spec: &FormationSpec,
    frames: &[PositionFrame],
    cfg: &RansacConfig,
) -> Result<Ofps, FormationError> {
    let own = *spec.position(agent_id).ok_or(FormationError::UnknownAgent(agent_id))?;
    let results: Vec<Result<(RobustRegistration, Vec<AgentId>), FormationError>> = frames
        .par_iter()
        .map(|f| register_frame(agent_id, spec, f, cfg))
        .collect();
    let mut out = Ofps {
        agent_id,
        times: Vec::with_capacity(frames.len()),
        points: Vec::with_capacity(frames.len()),
        transforms: Vec::with_capacity(frames.len()),
        inlier_masks: Vec::with_capacity(frames.len()),
        peer_ids: Vec::with_capacity(frames.len()),
    };
    for (frame, result) in frames.iter().zip(results) {
        let (reg, ids) = result?;
        let to_world = reg.transform.inverse();
        out.times.push(frame.time);
        out.points.push(to_world.apply(&own));
        out.transforms.push(to_world);
        out.inlier_masks.push(reg.inlier_mask);
        out.peer_ids.push(ids);
    }
    Ok(out)
}

/// Minimizes the unsquared objective `Σ‖dstᵢ − T(srcᵢ)‖` starting from the
/// closed-form squared solution.
///
/// Iteratively reweighted least squares (weights `1/‖rᵢ‖`) does the bulk of
/// the work; a coordinate pattern search (step 1e-3 → 1e-6) finishes.
pub fn align_unsquared(src: &[Point3], dst: &[Point3]) -> Result<(Sim3Transform, f64), GeometryError> {
    let mut best = align_closed_form(src, dst, None)?;
    let mut best_cost = residual_norm_sum(&best, src, dst);
    let scale_ref = dst.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let eps = 1e-12 * scale_ref;

    let mut weights = vec![0.0; src.len()];
    for _ in 0..500 {
        for (w, (s, d)) in weights.iter_mut().zip(src.iter().zip(dst)) {
            *w = 1.0 / (d - best.apply(s)).norm().max(eps);
        }
        let next = match align_closed_form(src, dst, Some(&weights)) {
            Ok(t) => t,
            Err(_) => break,
        };
        let cost = residual_norm_sum(&next, src, dst);
        if !(cost < best_cost) {
            break;
        }
        let gain = best_cost - cost;
        best = next;
        best_cost = cost;
        if gain <= 1e-14 * best_cost.max(eps) {
            break;
        }
    }

    let mut step = 1e-3;
    let mut base = best;
    while step >= 1e-6 {
        let mut improved = false;
        for coord in 0..7 {
            for sign in [1.0, -1.0] {
                let cand = perturb(&base, coord, sign * step);
                let cost = residual_norm_sum(&cand, src, dst);
                if cost < best_cost {
                    best_cost = cost;
                    base = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((base, best_cost))
}

fn perturb(t: &Sim3Transform, coord: usize, delta: f64) -> Sim3Transform {
    let mut out = *t;
    match coord {
        0..=2 => {
            let mut w = Vector3::zeros();
            w[coord] = delta;
            out.rotation = Rotation3::new(w).into_inner() * t.rotation;
        }
        3 => out.scale = t.scale * delta.exp(),
        _ => out.translation[coord - 4] += delta,
    }
    out
}

fn paired(
    actual: &BTreeMap<AgentId, Point3>,
    spec: &FormationSpec,
) -> Result<(Vec<Point3>, Vec<Point3>), FormationError> {
    if actual.len() < 3 {
        return Err(FormationError::TooFewAgents(actual.len()));
    }
    let mut src = Vec::with_capacity(actual.len());
    let mut dst = Vec::with_capacity(actual.len());
    for (id, p) in actual {
        src.push(*p);
        dst.push(*spec.position(*id).ok_or(FormationError::UnknownAgent(*id))?);
    }
    Ok((src, dst))
}

/// Mean per-agent distance error after the best similarity alignment of the
/// actual positions onto the desired formation.
pub fn formation_error(actual: &BTreeMap<AgentId, Point3>, spec: &FormationSpec) -> Result<f64, FormationError> {
    let (src, dst) = paired(actual, spec)?;
    let (_, cost) = align_unsquared(&src, &dst).map_err(|e| match e {
        GeometryError::DegenerateConfiguration | GeometryError::NonPositiveScale(_) => {
            FormationError::DegenerateConfiguration
        }
        other => FormationError::Geometry(other),
    })?;
    Ok(cost / src.len() as f64)
}

/// Optimal formation point with the agent's own pair kept in the fit.
///
/// Alternates a full-cloud least-squares alignment (own pair included) with
/// moving the own point to its exact pre-image under the fit.
pub fn ofp_exact_oracle(
    agent_id: AgentId,
    spec: &FormationSpec,
    frame: &PositionFrame,
    own_guess: Point3,
) -> Result<Point3, FormationError> {
    ofp_exact_oracle_subset(agent_id, spec, frame, own_guess, None)
}

/// As [`ofp_exact_oracle`], optionally restricted to a subset of peers.
pub fn ofp_exact_oracle_subset(
    agent_id: AgentId,
    spec: &FormationSpec,
    frame: &PositionFrame,
    own_guess: Point3,
    subset: Option<&BTreeSet<AgentId>>,
) -> Result<Point3, FormationError> {
    const ROUNDS: usize = 100;
    let own_des = *spec.position(agent_id).ok_or(FormationError::UnknownAgent(agent_id))?;
    let mut src = Vec::with_capacity(frame.positions.len() + 1);
    let mut dst = Vec::with_capacity(frame.positions.len() + 1);
    for (id, p) in &frame.positions {
        if *id == agent_id || subset.is_some_and(|s| !s.contains(id)) {
            continue;
        }
        src.push(*p);
        dst.push(*spec.position(*id).ok_or(FormationError::UnknownAgent(*id))?);
    }
    src.push(own_guess);
    dst.push(own_des);
    let own = src.len() - 1;
    for _ in 0..ROUNDS {
        let fit = align_closed_form(&src, &dst, None)?;
        let next = fit.inverse().apply(&own_des);
        let moved = (next - src[own]).norm();
        src[own] = next;
        if moved < 1e-10 {
            return Ok(next);
        }
    }
    Err(FormationError::NonConvergence(ROUNDS))
}

fn normalized_laplacian(points: &[Point3]) -> Result<DMatrix<f64>, FormationError> {
    let n = points.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[(i, j)] = (points[i] - points[j]).norm_squared();
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return Err(FormationError::DegenerateConfiguration);
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 } else { 0.0 };
        diag - w[(i, j)] / (deg[i] * deg[j]).sqrt()
    }))
}

/// Frobenius distance between the normalized Laplacians of the complete
/// graphs (edge weight: squared distance) of the actual and desired shapes.
pub fn laplacian_error_baseline(
    actual: &BTreeMap<AgentId, Point3>,
    spec: &FormationSpec,
) -> Result<f64, FormationError> {
    let (src, dst) = paired(actual, spec)?;
    let la = normalized_laplacian(&src)?;
    let ld = normalized_laplacian(&dst)?;
    Ok((la - ld).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, n: usize, size: f64) -> FormationSpec {
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-size..size),
                    rng.random_range(-size..size),
                    rng.random_range(-size..size),
                )
            })
            .collect();
        FormationSpec::from_points("random", &pts).unwrap()
    }

    fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform {
        let rv = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        Sim3Transform::from_parts(rv, t, rng.random_range(0.5..2.0))
    }

    fn frames_from(positions: &BTreeMap<AgentId, Point3>, own: AgentId, count: usize) -> Vec<PositionFrame> {
        (0..count)
            .map(|m| PositionFrame {
                timestamp_index: m,
                time: m as f64 * 0.2,
                positions: positions
                    .iter()
                    .filter(|(id, _)| **id != own)
                    .map(|(i, p)| (*i, *p))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn spec_validation() {
        let line: Vec<Point3> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            FormationSpec::from_points("l", &line),
            Err(FormationError::DegenerateConfiguration)
        );
        assert_eq!(
            FormationSpec::from_points("two", &line[..2]),
            Err(FormationError::TooFewAgents(2))
        );
    }

    #[test]
    fn stationary_and_linear_peer_frames() {
        let mut peers = BTreeMap::new();
        peers.insert(
            AgentId(1),
            PolyTrajectory::stationary(Vector3::new(1.0, 2.0, 3.0), 0.0, 1.0),
        );
        let frames = sample_peer_frames(&peers, 0.0, 2.0, 4).unwrap();
        assert_eq!(frames.len(), 5);
        assert!(frames
            .iter()
            .all(|f| f.positions[&AgentId(1)] == Vector3::new(1.0, 2.0, 3.0)));

        let mut c = nalgebra::Matrix6x3::zeros();
        c[(1, 0)] = 2.0; // x = 2t
        let line = PolyTrajectory::new(
            vec![crate::trajectory::Piece {
                coeffs: c,
                duration: 5.0,
            }],
            0.0,
        )
        .unwrap();
        let mut one = BTreeMap::new();
        one.insert(AgentId(4), line);
        let frames = sample_peer_frames(&one, 1.0, 1.0, 2).unwrap();
        let xs: Vec<f64> = frames.iter().map(|f| f.positions[&AgentId(4)].x).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert_eq!(frames[2].time, 2.0);

        assert_eq!(
            sample_peer_frames(&BTreeMap::new(), 0.0, 1.0, 2),
            Err(FormationError::EmptyPeerSet)
        );
        assert_eq!(
            sample_peer_frames(&one, 0.0, 1.0, 0),
            Err(FormationError::InvalidHorizon)
        );
    }

    #[test]
    fn ofps_identity_and_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = random_spec(&mut rng, 12, 5.0);
        let me = AgentId(3);
        let cfg = RansacConfig::default();

        let frames = frames_from(spec.desired(), me, 4);
        let ofps = compute_ofps(me, &spec, &frames, &cfg).unwrap();
        for p in &ofps.points {
            assert!((p - spec.position(me).unwrap()).norm() < 1e-9);
        }

        let g = random_sim3(&mut rng);
        let moved: BTreeMap<_, _> = spec.desired().iter().map(|(i, p)| (*i, g.apply(p))).collect();
        let frames = frames_from(&moved, me, 4);
        let ofps = compute_ofps(me, &spec, &frames, &cfg).unwrap();
        let expected = g.apply(spec.position(me).unwrap());
        for (m, p) in ofps.points.iter().enumerate() {
            assert!((p - expected).norm() < 1e-8);
            assert!((ofps.transforms[m].apply(spec.position(me).unwrap()) - p).norm() < 1e-12);
            let reg = ofps.registration(m);
            let world = ofp_from_registration(&reg, spec.position(me).unwrap(), FrameConvention::World);
            assert!((world - expected).norm() < 1e-8);
            // the printed direction lands in the desired frame instead
            let printed = ofp_from_registration(&reg, spec.position(me).unwrap(), FrameConvention::AsPrinted);
            assert!((printed - expected).norm() > 1e-3);
        }

        let mut corrupted = moved.clone();
        corrupted.get_mut(&AgentId(7)).unwrap().x += 10.0;
        let frames_c = frames_from(&corrupted, me, 4);
        let with_outlier = compute_ofps(me, &spec, &frames_c, &cfg).unwrap();
        let idx = with_outlier.peer_ids[0].iter().position(|&i| i == AgentId(7)).unwrap();
        for (m, p) in with_outlier.points.iter().enumerate() {
            assert!((p - expected).norm() < 1e-6);
            assert!(!with_outlier.inlier_masks[m][idx]);
        }
    }

    #[test]
    fn identity_convention_differs_only_for_non_identity_fits() {
        let own = Vector3::new(1.0, 2.0, 3.0);
        let id = Sim3Transform::identity();
        assert_eq!(ofp_from_registration(&id, &own, FrameConvention::World), own);
        assert_eq!(ofp_from_registration(&id, &own, FrameConvention::AsPrinted), own);
    }

    #[test]
    fn formation_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let spec = random_spec(&mut rng, 10, 4.0);
        assert!(formation_error(spec.desired(), &spec).unwrap() < 1e-10);
        let g = random_sim3(&mut rng);
        let moved: BTreeMap<_, _> = spec.desired().iter().map(|(i, p)| (*i, g.apply(p))).collect();
        assert!(formation_error(&moved, &spec).unwrap() < 1e-8);
        let mut unknown = moved.clone();
        unknown.insert(AgentId(99), Vector3::zeros());
        assert_eq!(
            formation_error(&unknown, &spec),
            Err(FormationError::UnknownAgent(AgentId(99)))
        );
    }

    #[test]
    fn oracle_fixed_point_at_desired() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let spec = random_spec(&mut rng, 8, 4.0);
        let me = AgentId(2);
        let frame = &frames_from(spec.desired(), me, 1)[0];
        let p = ofp_exact_oracle(me, &spec, frame, Vector3::new(40.0, -3.0, 7.0)).unwrap();
        assert!((p - spec.position(me).unwrap()).norm() < 1e-8);
    }

    #[test]
    fn oracle_subset_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let spec = random_spec(&mut rng, 10, 4.0);
        let me = AgentId(0);
        let g = random_sim3(&mut rng);
        let moved: BTreeMap<_, _> = spec.desired().iter().map(|(i, p)| (*i, g.apply(p))).collect();
        let frame = &frames_from(&moved, me, 1)[0];
        let subset: BTreeSet<AgentId> = [1, 4, 6, 8].into_iter().map(AgentId).collect();
        let p = ofp_exact_oracle_subset(me, &spec, frame, Vector3::zeros(), Some(&subset)).unwrap();
        assert!((p - g.apply(spec.position(me).unwrap())).norm() < 1e-8);
    }

    #[test]
    fn laplacian_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let spec = random_spec(&mut rng, 9, 4.0);
        assert!(laplacian_error_baseline(spec.desired(), &spec).unwrap() < 1e-12);
        let scaled: BTreeMap<_, _> = spec.desired().iter().map(|(i, p)| (*i, p * 2.7)).collect();
        assert!(laplacian_error_baseline(&scaled, &spec).unwrap() < 1e-12);
        let mut bent = spec.desired().clone();
        bent.get_mut(&AgentId(0)).unwrap().z += 1.0;
        assert!(laplacian_error_baseline(&bent, &spec).unwrap() > 1e-3);
    }

    #[test]
    fn shifted_ofps_keeps_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let spec = random_spec(&mut rng, 8, 4.0);
        let me = AgentId(1);
        let ofps = compute_ofps(me, &spec, &frames_from(spec.desired(), me, 3), &RansacConfig::default()).unwrap();
        let s = ofps.shifted(|m| Vector3::new(m as f64, 0.0, 0.0));
        for m in 0..3 {
            assert!((s.transforms[m].apply(spec.position(me).unwrap()) - s.points[m]).norm() < 1e-12);
        }
    }
}
