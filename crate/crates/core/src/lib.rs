pub mod bd;
pub mod codec;
pub mod energy;
pub mod features;
pub mod ml;
pub mod pareto;
pub mod pipeline;
pub mod quality;
pub mod resample;
pub mod video;
