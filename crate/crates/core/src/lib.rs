// SPDX-License-Identifier: Apache-2.0

pub mod model;
pub mod signals;
pub mod profile;
pub mod detect;
pub mod metrics;
pub mod synth;
pub mod pipeline;
