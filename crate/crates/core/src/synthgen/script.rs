//! Waypoint choreographies for the scripted tactics.
//!
//! Positions are court coordinates of the three attackers; the hoop sits at
//! `(0, HOOP_Y)` near the baseline `y = −5.5`.

use rand::Rng;

use super::SynthError;
use crate::data::Vocabulary;

pub const HOOP_Y: f64 = -3.925;
pub const SCRIPTED: usize = 6;

/// One attacker's path: `(time fraction, [x, y])`, fractions increasing.
pub type Track = Vec<(f64, [f64; 2])>;

#[derive(Clone, Debug, PartialEq)]
pub struct TacticScript {
    pub category: usize,
    pub tracks: [Track; 3],
    /// `(time fraction, attacker)` possession changes, first at 0.
    pub ball: Vec<(f64, Option<usize>)>,
    /// Inclusive frame range for the clip length.
    pub duration: (usize, usize),
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

impl TacticScript {
    /// Position of attacker `agent` at time fraction `s ∈ [0, 1]`.
    pub fn position(&self, agent: usize, s: f64) -> [f64; 2] {
        let tr = &self.tracks[agent];
        if s <= tr[0].0 {
            return tr[0].1;
        }
        for w in tr.windows(2) {
            let ((s0, p0), (s1, p1)) = (w[0], w[1]);
            if s <= s1 {
                let u = if s1 > s0 { smoothstep((s - s0) / (s1 - s0)) } else { 1.0 };
                return [p0[0] + u * (p1[0] - p0[0]), p0[1] + u * (p1[1] - p0[1])];
            }
        }
        tr[tr.len() - 1].1
    }

    /// Attacker holding the ball at time fraction `s`.
    pub fn carrier(&self, s: f64) -> Option<usize> {
        let mut who = None;
        for &(at, a) in &self.ball {
            if at <= s {
                who = a;
            }
        }
        who
    }

    pub fn start_positions(&self) -> [[f64; 2]; 3] {
        [0, 1, 2].map(|a| self.position(a, 0.0))
    }

    pub fn end_positions(&self) -> [[f64; 2]; 3] {
        [0, 1, 2].map(|a| self.position(a, 1.0))
    }

    fn mirrored(mut self) -> Self {
        for tr in &mut self.tracks {
            for (_, p) in tr.iter_mut() {
                p[0] = -p[0];
            }
        }
        self
    }

    fn reversed(mut self) -> Self {
        for tr in &mut self.tracks {
            tr.reverse();
            for (s, _) in tr.iter_mut() {
                *s = 1.0 - *s;
            }
        }
        // possession over [a, b) becomes possession over (1 − b, 1 − a]
        let mut spans: Vec<(f64, Option<usize>)> = Vec::new();
        let mut ends: Vec<f64> = self.ball.iter().skip(1).map(|b| b.0).collect();
        ends.push(1.0);
        for (&(_, who), &end) in self.ball.iter().zip(&ends).rev() {
            spans.push((1.0 - end, who));
        }
        spans[0].0 = 0.0;
        self.ball = spans;
        self
    }

    /// Copy with every attacker shifted by a common offset and each waypoint
    /// perturbed further, both uniform in `±jitter`.
    pub fn jittered<R: Rng>(&self, rng: &mut R, jitter: f64) -> Self {
        let mut out = self.clone();
        if jitter <= 0.0 {
            return out;
        }
        for tr in &mut out.tracks {
            let off = [rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter)];
            for (_, p) in tr.iter_mut() {
                p[0] += off[0] + rng.gen_range(-jitter..=jitter) / 3.0;
                p[1] += off[1] + rng.gen_range(-jitter..=jitter) / 3.0;
            }
        }
        out
    }
}

fn track(points: &[(f64, f64, f64)]) -> Track {
    points.iter().map(|&(s, x, y)| (s, [x, y])).collect()
}

fn base_script(kind: usize) -> TacticScript {
    let (tracks, ball, duration) = match kind {
        // PnR: a wing player screens at the top, the handler comes off it and
        // the screener rolls to the rim for the pass.
        0 => (
            [
                track(&[(0.0, 0.5, 4.0), (0.35, 0.5, 4.0), (0.7, 2.8, 1.2), (1.0, 2.0, -1.5)]),
                track(&[(0.0, -3.5, 0.5), (0.35, -0.3, 3.2), (0.5, -0.3, 3.2), (1.0, -0.8, -2.6)]),
                track(&[(0.0, 5.5, -3.8), (1.0, 5.5, -3.5)]),
            ],
            vec![(0.0, Some(0)), (0.85, Some(1))],
            (120, 300),
        ),
        // ISO: the handler drives from the top while the others hold corners.
        1 => (
            [
                track(&[(0.0, 0.0, 3.8), (0.3, 0.0, 3.6), (0.65, 1.5, 0.5), (1.0, 0.6, -2.6)]),
                track(&[(0.0, -5.8, -4.0), (1.0, -5.6, -3.8)]),
                track(&[(0.0, 5.8, -4.0), (1.0, 5.6, -3.8)]),
            ],
            vec![(0.0, Some(0))],
            (100, 250),
        ),
        // Basket Cut: weak-side wing cuts to the rim and catches.
        2 => (
            [
                track(&[(0.0, -4.5, 2.0), (1.0, -4.3, 2.0)]),
                track(&[(0.0, 4.5, 2.0), (0.25, 4.5, 2.0), (0.8, 0.8, -2.8), (1.0, 0.5, -3.0)]),
                track(&[(0.0, -5.8, -4.0), (1.0, -5.8, -4.0)]),
            ],
            vec![(0.0, Some(0)), (0.8, Some(1))],
            (60, 160),
        ),
        // Exit: cross screen in the paint, the screened player pops to the arc.
        3 => (
            [
                track(&[(0.0, 1.0, 4.0), (1.0, 1.2, 3.8)]),
                track(&[(0.0, -1.0, -3.0), (0.3, -1.0, -3.0), (0.85, -5.5, 0.8), (1.0, -5.8, 1.0)]),
                track(&[(0.0, 1.2, -3.3), (0.4, -0.6, -3.1), (1.0, -0.6, -3.1)]),
            ],
            vec![(0.0, Some(0)), (0.85, Some(1))],
            (80, 200),
        ),
        // Cross: baseline run from one corner to the other off a screen.
        4 => (
            [
                track(&[(0.0, 0.0, 4.0), (1.0, -0.5, 3.8)]),
                track(&[(0.0, -4.5, -3.8), (0.2, -4.5, -3.8), (0.85, 4.5, -3.6), (1.0, 4.8, -3.4)]),
                track(&[(0.0, 0.2, -2.6), (0.3, 0.0, -3.4), (1.0, 0.0, -3.4)]),
            ],
            vec![(0.0, Some(0)), (0.9, Some(1))],
            (60, 180),
        ),
        // DHO: dribble toward a teammate, hand off, the receiver attacks.
        _ => (
            [
                track(&[(0.0, -3.5, 3.5), (0.6, 1.7, 2.8), (0.7, 1.7, 2.8), (1.0, 0.5, 4.0)]),
                track(&[(0.0, 2.8, 2.5), (0.6, 2.6, 2.5), (0.7, 2.6, 2.5), (1.0, 1.2, -2.2)]),
                track(&[(0.0, -5.8, -4.0), (1.0, -5.8, -4.0)]),
            ],
            vec![(0.0, Some(0)), (0.68, Some(1))],
            (80, 200),
        ),
    };
    TacticScript {
        category: kind,
        tracks,
        ball,
        duration,
    }
}

/// Script for a vocabulary id. Ids past the scripted six reuse a base
/// choreography mirrored, time-reversed, or both.
pub fn script_for(category: usize) -> Result<TacticScript, SynthError> {
    if category >= Vocabulary::full().len() {
        return Err(SynthError::UnknownCategory(category));
    }
    let mut s = base_script(category % SCRIPTED);
    let variant = category / SCRIPTED;
    if variant & 1 == 1 {
        s = s.mirrored();
    }
    if variant & 2 == 2 {
        s = s.reversed();
    }
    s.category = category;
    Ok(s)
}
