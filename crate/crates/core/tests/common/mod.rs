pub mod identities;
pub mod oracle;
