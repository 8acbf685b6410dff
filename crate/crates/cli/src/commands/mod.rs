pub mod gen_data;
pub mod gradcheck;
pub mod stats;
pub mod train;
