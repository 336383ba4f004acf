//! Screened portfolio construction, monthly-rebalanced simulation, KPIs and
//! the walk-forward protocol.

pub mod calendar;
pub mod data;
pub mod kpi;
pub mod screens;
pub mod simulate;
pub mod walk;

pub use calendar::Review;
pub use data::{Market, Prices, Universe, UniverseRow, UniverseSnapshot};
pub use kpi::{kpis, max_drawdown, KpiReport};
pub use screens::{best_in_class, ml_screen, sector_match};
pub use simulate::{simulate, PortfolioSeries};
pub use walk::{learning_y, walk_forward, BacktestReport, Engine, WalkForward, WalkForwardConfig};
