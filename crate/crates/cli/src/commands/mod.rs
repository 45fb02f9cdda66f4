pub mod check;
pub mod enhance;
pub mod evaluate;
pub mod gen_data;
pub mod train;
