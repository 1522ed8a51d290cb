pub mod attention;
mod conv;
mod elementwise;
mod norm;
