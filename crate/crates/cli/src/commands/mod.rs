pub mod forecast;
pub mod identify;
pub mod simulate;
