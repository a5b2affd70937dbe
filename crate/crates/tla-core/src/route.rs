//! Piecewise-constant route description: grade and legal speed limit along a
//! single lane, parameterized by distance from the route origin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("route length must be positive, got {0}")]
    BadLength(f64),
    #[error("route needs at least one piece starting at 0")]
    MissingOrigin,
    #[error("route pieces must have strictly increasing start positions")]
    UnsortedPieces,
    #[error("route piece {index}: legal limit must be positive, got {value}")]
    BadLimit { index: usize, value: f64 },
    #[error("route piece {index}: grade must be a finite angle in radians")]
    BadGrade { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutePiece {
    /// Distance at which this piece begins, m.
    pub start: f64,
    /// Road angle, radians. Positive is uphill.
    #[serde(default)]
    pub grade: f64,
    /// Legal speed limit on this piece, m/s.
    pub legal_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub length: f64,
    pub pieces: Vec<RoutePiece>,
}

impl Route {
    /// Flat route with a single legal limit; handy in tests.
    pub fn flat(length: f64, legal_limit: f64) -> Self {
        Self { length, pieces: vec![RoutePiece { start: 0.0, grade: 0.0, legal_limit }] }
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(RouteError::BadLength(self.length));
        }
        if self.pieces.first().map(|p| p.start) != Some(0.0) {
            return Err(RouteError::MissingOrigin);
        }
        for (i, w) in self.pieces.windows(2).enumerate() {
            if !(w[1].start > w[0].start) {
                return Err(RouteError::UnsortedPieces);
            }
            let _ = i;
        }
        for (index, p) in self.pieces.iter().enumerate() {
            if !(p.legal_limit > 0.0) || !p.legal_limit.is_finite() {
                return Err(RouteError::BadLimit { index, value: p.legal_limit });
            }
            if !p.grade.is_finite() || p.grade.abs() >= std::f64::consts::FRAC_PI_2 {
                return Err(RouteError::BadGrade { index });
            }
        }
        Ok(())
    }

    fn piece_at(&self, position: f64) -> &RoutePiece {
        let idx = self.pieces.partition_point(|p| p.start <= position);
        &self.pieces[idx.saturating_sub(1)]
    }

    pub fn grade_at(&self, position: f64) -> f64 {
        self.piece_at(position).grade
    }

    pub fn legal_limit_at(&self, position: f64) -> f64 {
        self.piece_at(position).legal_limit
    }

    /// Smallest legal limit anywhere on `[from, to]` (order-insensitive).
    pub fn min_legal_between(&self, from: f64, to: f64) -> f64 {
        let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
        let mut min = self.legal_limit_at(lo);
        for p in &self.pieces {
            if p.start > lo && p.start <= hi {
                min = min.min(p.legal_limit);
            }
        }
        min
    }

    pub fn max_legal(&self) -> f64 {
        self.pieces.iter().map(|p| p.legal_limit).fold(0.0, f64::max)
    }
}
