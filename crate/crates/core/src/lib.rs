pub mod activation;
pub mod channels;
pub mod data;
pub mod eigen;
pub mod flow;
pub mod landscape;
pub mod error;
pub mod exp;
pub mod net;
pub mod pop;
pub mod quad;
pub mod special;
