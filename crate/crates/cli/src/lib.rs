//! Library side of the `hdbreak` command-line tool: CSV ingestion, the
//! oil–output series transforms and the empirical test pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod empirical;
