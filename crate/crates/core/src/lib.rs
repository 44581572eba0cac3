//! Beacon-chain consensus simulator: LMD-GHOST fork choice, Casper FFG
//! finality, and two withholding strategies available to a minority staker
//! (private-fork reorgs and EBB-withholding finality delays), together with
//! the reward arithmetic and Monte Carlo estimators used to price them.

pub mod attack_finality;
pub mod attack_reorg;
pub mod finality;
pub mod fork_choice;
pub mod montecarlo;
pub mod protocol;
pub mod rewards;
pub mod scenario;
pub mod sim;

pub use fork_choice::TieBreak;
pub use protocol::{
    Actor, Attestation, Block, BlockId, ChainState, CommitteeSchedule, Epoch, ProtocolParams, Slot,
    ValidatorIndex, View, Visibility,
};
pub use rewards::{Gwei, RewardParams};
