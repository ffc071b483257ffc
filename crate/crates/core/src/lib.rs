//! Closed-loop, event-driven freeway ramp metering.
//!
//! A cell-transmission simulator produces sensor events; a complex-event
//! processing engine turns them into congestion and queue forecasts; local
//! ramp controllers and a coordination state machine consume those and
//! command metering rates back into the simulator.

pub mod bus;
pub mod cep;
pub mod control;
pub mod coordination;
pub mod ctm;
pub mod estimation;
pub mod event;
pub mod fd;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scenario;
pub mod synthetic;
