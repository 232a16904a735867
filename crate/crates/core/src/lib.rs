//! Factorized spatio-temporal forecasting.
//!
//! A univariate temporal backbone is pretrained with quantile objectives on
//! synthetic or CSV series ([`backbone`], [`trainer::utp`]), then specialised
//! to a multi-node panel by a lightweight adapter that injects node and
//! calendar context plus low-rank prompts ([`adapter`], [`trainer::sta`]).

pub mod adapter;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use adapter::Adapter;
pub use backbone::{Backbone, QuantileForecast};
pub use config::{AdapterConfig, BackboneConfig, KvDoc, LossKind, TrainConfig};
pub use data::window::{PanelWindow, SeriesWindow};
pub use data::STDataset;
pub use error::{Error, Result};
pub use params::ParameterStore;
