//! Observables `phi(xi, x)` depending on the current symbol and the fiber point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codes::Symbol;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    Cos { freq: u32 },
    Sin { freq: u32 },
    /// 1 when the current symbol is `symbol`.
    SymbolIndicator { symbol: Symbol },
    /// The fiber coordinate itself.
    Coordinate,
}

impl Observable {
    #[inline]
    pub fn eval(&self, s: Symbol, x: f64) -> f64 {
        match *self {
            Observable::Constant { value } => value,
            Observable::Cos { freq } => (2.0 * PI * freq as f64 * x).cos(),
            Observable::Sin { freq } => (2.0 * PI * freq as f64 * x).sin(),
            Observable::SymbolIndicator { symbol } => (s == symbol) as u8 as f64,
            Observable::Coordinate => x,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Observable::Constant { value } => format!("const({value})"),
            Observable::Cos { freq } => format!("cos(2pi*{freq}x)"),
            Observable::Sin { freq } => format!("sin(2pi*{freq}x)"),
            Observable::SymbolIndicator { symbol } => format!("1[xi0={symbol}]"),
            Observable::Coordinate => "x".to_string(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            Observable::Constant { value } => value.abs(),
            _ => 1.0,
        }
    }

    /// The battery used for concentration and weak-star checks.
    /// Functions of the fiber coordinate only.
    pub fn default_battery() -> Vec<Observable> {
        vec![
            Observable::Cos { freq: 1 },
            Observable::Sin { freq: 1 },
            Observable::Cos { freq: 2 },
            Observable::Sin { freq: 2 },
            Observable::Coordinate,
        ]
    }
}
