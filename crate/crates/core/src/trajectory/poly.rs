use nalgebra::{Matrix6x3, Vector3};
use serde::{Deserialize, Serialize};

use super::TrajectoryError;
use crate::geometry::Point3;

/// Polynomial degree of every piece.
pub const DEGREE: usize = 5;
pub const NCOEFF: usize = DEGREE + 1;

/// Coefficient multiplier of `t^(k−d)` in the `d`-th derivative of `t^k`.
#[inline]
fn falling(k: usize, d: usize) -> f64 {
    (k + 1 - d..=k).map(|v| v as f64).product()
}

/// `d`-th derivative of the natural basis `[1, t, …, t⁵]` at `t`.
pub fn basis(t: f64, order: usize) -> [f64; NCOEFF] {
    let mut out = [0.0; NCOEFF];
    if order > DEGREE {
        return out;
    }
    let mut pow = 1.0;
    for k in order..NCOEFF {
        out[k] = falling(k, order) * pow;
        pow *= t;
    }
    out
}

/// One quintic piece: row `k` of `coeffs` holds the `tᵏ` coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub coeffs: Matrix6x3<f64>,
    pub duration: f64,
}

impl Piece {
    pub fn eval(&self, t: f64, order: usize) -> Vector3<f64> {
        let b = basis(t, order);
        let mut out = Vector3::zeros();
        for (k, bk) in b.iter().enumerate() {
            if *bk != 0.0 {
                out += *bk * self.coeffs.row(k).transpose();
            }
        }
        out
    }
}

/// Piecewise quintic trajectory over `[start_time, start_time + Σ Tᵢ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTrajectory {
    pieces: Vec<Piece>,
    start_time: f64,
}

/// Position, velocity, acceleration and jerk at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub piece: usize,
    pub index: usize,
    /// Absolute time.
    pub time: f64,
    /// Time within the piece.
    pub local_time: f64,
    pub position: Point3,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

impl PolyTrajectory {
    pub fn new(pieces: Vec<Piece>, start_time: f64) -> Result<Self, TrajectoryError> {
        if pieces.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(i) = pieces
            .iter()
            .position(|p| !(p.duration > 0.0) || !p.duration.is_finite())
        {
            return Err(TrajectoryError::InvalidDuration(i, pieces[i].duration));
        }
        Ok(Self { pieces, start_time })
    }

    /// A single-piece trajectory holding `position` for `duration` seconds.
    pub fn stationary(position: Point3, start_time: f64, duration: f64) -> Self {
        let mut coeffs = Matrix6x3::zeros();
        coeffs.set_row(0, &position.transpose());
        Self {
            pieces: vec![Piece {
                coeffs,
                duration: duration.max(f64::MIN_POSITIVE),
            }],
            start_time,
        }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn set_start_time(&mut self, t: f64) {
        self.start_time = t;
    }

    pub fn durations(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.duration).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.pieces.iter().map(|p| p.duration).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.total_duration()
    }

    /// Piece index and local time; half-open pieces, the last one closed.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), TrajectoryError> {
        let end = self.end_time();
        if !(t >= self.start_time && t <= end) {
            return Err(TrajectoryError::OutOfDomain {
                t,
                start: self.start_time,
                end,
            });
        }
        let mut offset = self.start_time;
        let last = self.pieces.len() - 1;
        for (i, p) in self.pieces.iter().enumerate() {
            if i == last || t < offset + p.duration {
                return Ok((i, (t - offset).clamp(0.0, p.duration)));
            }
            offset += p.duration;
        }
        unreachable!()
    }

    /// `order`-th derivative at absolute time `t`; orders above 5 are zero.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vector3<f64>, TrajectoryError> {
        let (i, local) = self.locate(t)?;
        Ok(self.pieces[i].eval(local, order))
    }

    pub fn position(&self, t: f64) -> Result<Point3, TrajectoryError> {
        self.eval(t, 0)
    }

    /// End state `(position, velocity, acceleration)`.
    pub fn end_state(&self) -> (Point3, Vector3<f64>, Vector3<f64>) {
        let p = self.pieces.last().unwrap();
        (p.eval(p.duration, 0), p.eval(p.duration, 1), p.eval(p.duration, 2))
    }

    /// Evaluates outside the domain by holding the start state before the
    /// start and continuing with the final velocity after the end.
    pub fn eval_extended(&self, t: f64, order: usize) -> Vector3<f64> {
        if t <= self.start_time {
            return self.pieces[0].eval(0.0, order);
        }
        let end = self.end_time();
        if t >= end {
            let (p, v, _) = self.end_state();
            return match order {
                0 => p + v * (t - end),
                1 => v,
                _ => Vector3::zeros(),
            };
        }
        self.eval(t, order).expect("inside domain")
    }

    /// Samples `kappa` instants per piece at `(j/κ)·Tᵢ`, `j = 0..κ−1`.
    pub fn sample_constraint_points(&self, kappa: usize) -> Vec<KinematicSample> {
        let kappas = vec![kappa; self.pieces.len()];
        self.sample_constraint_points_per_piece(&kappas)
    }

    /// Like [`Self::sample_constraint_points`] with a per-piece count.
    pub fn sample_constraint_points_per_piece(&self, kappas: &[usize]) -> Vec<KinematicSample> {
        assert_eq!(kappas.len(), self.pieces.len(), "one kappa per piece");
        let mut out = Vec::with_capacity(kappas.iter().sum());
        let mut offset = self.start_time;
        for (i, (piece, &kappa)) in self.pieces.iter().zip(kappas).enumerate() {
            assert!(kappa >= 1, "kappa must be at least 1");
            for j in 0..kappa {
                let local = j as f64 / kappa as f64 * piece.duration;
                out.push(KinematicSample {
                    piece: i,
                    index: j,
                    time: offset + local,
                    local_time: local,
                    position: piece.eval(local, 0),
                    velocity: piece.eval(local, 1),
                    acceleration: piece.eval(local, 2),
                    jerk: piece.eval(local, 3),
                });
            }
            offset += piece.duration;
        }
        out
    }
}

const MAGIC: &[u8; 4] = b"PTRJ";
const FORMAT_VERSION: u16 = 1;

/// Serialized wire form: canonical, little-endian.
///
/// ```text
/// "PTRJ" | version u16 | start_time f64 | pieces u32 |
///   pieces × (duration f64 | 18 × coefficient f64, row-major tᵏ rows)
/// ```
impl PolyTrajectory {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.pieces.len() * 8 * 19);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.start_time.to_le_bytes());
        out.extend_from_slice(&(self.pieces.len() as u32).to_le_bytes());
        for p in &self.pieces {
            out.extend_from_slice(&p.duration.to_le_bytes());
            for k in 0..NCOEFF {
                for d in 0..3 {
                    out.extend_from_slice(&p.coeffs[(k, d)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrajectoryError> {
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(TrajectoryError::Decode("bad magic"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(TrajectoryError::Decode("unsupported version"));
        }
        let start_time = r.f64()?;
        let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut pieces = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let duration = r.f64()?;
            let mut coeffs = Matrix6x3::zeros();
            for k in 0..NCOEFF {
                for d in 0..3 {
                    coeffs[(k, d)] = r.f64()?;
                }
            }
            pieces.push(Piece { coeffs, duration });
        }
        if !r.0.is_empty() {
            return Err(TrajectoryError::Decode("trailing bytes"));
        }
        PolyTrajectory::new(pieces, start_time)
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrajectoryError> {
        if self.0.len() < n {
            return Err(TrajectoryError::Decode("truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn f64(&mut self) -> Result<f64, TrajectoryError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Human-readable companion of the binary form for logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub version: u16,
    pub start_time: f64,
    pub durations: Vec<f64>,
    /// Per piece, six rows of `[x, y, z]` coefficients.
    pub coefficients: Vec<[[f64; 3]; NCOEFF]>,
}

impl From<&PolyTrajectory> for TrajectoryRecord {
    fn from(t: &PolyTrajectory) -> Self {
        Self {
            version: FORMAT_VERSION,
            start_time: t.start_time,
            durations: t.durations(),
            coefficients: t
                .pieces
                .iter()
                .map(|p| std::array::from_fn(|k| [p.coeffs[(k, 0)], p.coeffs[(k, 1)], p.coeffs[(k, 2)]]))
                .collect(),
        }
    }
}

impl TryFrom<TrajectoryRecord> for PolyTrajectory {
    type Error = TrajectoryError;

    fn try_from(r: TrajectoryRecord) -> Result<Self, Self::Error> {
        if r.version != FORMAT_VERSION {
            return Err(TrajectoryError::Decode("unsupported version"));
        }
        if r.durations.len() != r.coefficients.len() {
            return Err(TrajectoryError::Decode("durations and coefficients differ in length"));
        }
        let pieces = r
            .durations
            .iter()
            .zip(&r.coefficients)
            .map(|(&duration, rows)| Piece {
                coeffs: Matrix6x3::from_fn(|k, d| rows[k][d]),
                duration,
            })
            .collect();
        PolyTrajectory::new(pieces, r.start_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(start_time: f64) -> PolyTrajectory {
        // p(t) = (t, 2t, 0) over two pieces of 1 s
        let mut c0 = Matrix6x3::zeros();
        c0[(1, 0)] = 1.0;
        c0[(1, 1)] = 2.0;
        let mut c1 = c0;
        c1[(0, 0)] = 1.0;
        c1[(0, 1)] = 2.0;
        PolyTrajectory::new(
            vec![
                Piece {
                    coeffs: c0,
                    duration: 1.0,
                },
                Piece {
                    coeffs: c1,
                    duration: 1.0,
                },
            ],
            start_time,
        )
        .unwrap()
    }

    #[test]
    fn basis_derivatives() {
        assert_eq!(basis(2.0, 0), [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(basis(2.0, 1), [0.0, 1.0, 4.0, 12.0, 32.0, 80.0]);
        assert_eq!(basis(2.0, 5), [0.0, 0.0, 0.0, 0.0, 0.0, 120.0]);
        assert_eq!(basis(2.0, 6), [0.0; 6]);
    }

    #[test]
    fn eval_domain_and_orders() {
        let t = line(10.0);
        assert_eq!(t.eval(10.0, 0).unwrap(), Vector3::zeros());
        assert_eq!(t.eval(11.5, 0).unwrap(), Vector3::new(1.5, 3.0, 0.0));
        assert_eq!(t.eval(12.0, 1).unwrap(), Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(t.eval(11.0, 6).unwrap(), Vector3::zeros());
        assert!(matches!(t.eval(9.99, 0), Err(TrajectoryError::OutOfDomain { .. })));
        assert!(matches!(t.eval(12.01, 0), Err(TrajectoryError::OutOfDomain { .. })));
        assert_eq!(t.locate(11.0).unwrap(), (1, 0.0));
        assert_eq!(t.locate(12.0).unwrap(), (1, 1.0));
    }

    #[test]
    fn extended_eval() {
        let t = line(0.0);
        assert_eq!(t.eval_extended(-1.0, 0), Vector3::zeros());
        assert_eq!(t.eval_extended(3.0, 0), Vector3::new(3.0, 6.0, 0.0));
        let s = PolyTrajectory::stationary(Vector3::new(1.0, 2.0, 3.0), 0.0, 1.0);
        assert_eq!(s.eval_extended(50.0, 0), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn constraint_sampling() {
        let t = line(0.0);
        let one = t.sample_constraint_points(1);
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].time, 1.0);
        let four = t.sample_constraint_points(4);
        assert_eq!(four.len(), 8);
        let times: Vec<f64> = four.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75]);
        for s in &four {
            assert_eq!(s.position, t.eval(s.time, 0).unwrap());
            assert_eq!(s.velocity, t.eval(s.time, 1).unwrap());
        }
        let mixed = t.sample_constraint_points_per_piece(&[2, 3]);
        assert_eq!(mixed.len(), 5);
    }

    #[test]
    fn rejects_bad_durations() {
        let p = Piece {
            coeffs: Matrix6x3::zeros(),
            duration: 0.0,
        };
        assert!(matches!(
            PolyTrajectory::new(vec![p], 0.0),
            Err(TrajectoryError::InvalidDuration(0, _))
        ));
        assert!(matches!(PolyTrajectory::new(vec![], 0.0), Err(TrajectoryError::Empty)));
    }

    #[test]
    fn decode_rejects_garbage() {
        let bytes = line(0.0).to_bytes();
        assert!(PolyTrajectory::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(PolyTrajectory::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(PolyTrajectory::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn wire_and_record_round_trip(
            start in -100.0f64..100.0,
            durs in proptest::collection::vec(0.01f64..5.0, 1..6),
            seed in proptest::collection::vec(-10.0f64..10.0, 18),
        ) {
            let pieces: Vec<Piece> = durs.iter().enumerate().map(|(i, &d)| Piece {
                coeffs: Matrix6x3::from_fn(|k, c| seed[k * 3 + c] * (i + 1) as f64),
                duration: d,
            }).collect();
            let t = PolyTrajectory::new(pieces, start).unwrap();
            prop_assert_eq!(&PolyTrajectory::from_bytes(&t.to_bytes()).unwrap(), &t);
            let rec = TrajectoryRecord::from(&t);
            prop_assert_eq!(&PolyTrajectory::try_from(rec).unwrap(), &t);
        }
    }
}
