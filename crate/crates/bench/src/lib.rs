//! Seeded problem instances shared by the benchmarks.

use irs_core::beamforming::{solve_olp, OlpOptions};
use irs_core::linalg::crandn_vector;
use irs_core::maxmin_sdp::build_ratio_system;
use irs_core::sysmodel::{gen_los_channel, ones, LosAngles, RankMode};
use irs_core::{ChannelSet, ChannelStatistics, CVector, LinkGains, RatioSystem, SystemConfig, TrainingDesign, UserLink};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Unit-gain channels with uncorrelated fading and a random high-rank BS→IRS link.
pub fn channels(m: usize, n: usize, k: usize, seed: u64) -> ChannelSet {
    let cfg = SystemConfig { antennas: m, elements: n, users: k, subphases: n + 1, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = ChannelStatistics::new(
        LinkGains::uniform(k, 1.0, 1.0, 1.0),
        vec![irs_core::CMatrix::identity(m, m); k],
        vec![irs_core::CMatrix::identity(n, n); k],
    )
    .expect("identity statistics");
    let h1 = gen_los_channel(&cfg, 1.0, &LosAngles::random(m, n, &mut rng), RankMode::HighRank).expect("LoS channel");
    ChannelSet::draw(Arc::new(stats), h1, &mut rng).expect("channel draw")
}

/// Overall channels at `v = 1`.
pub fn olp_channels(m: usize, k: usize, seed: u64) -> Vec<CVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| crandn_vector(m, &mut rng)).collect()
}

/// Reflect-vector subproblem at the OLP solution for `v = 1`.
pub fn ratio_system(m: usize, n: usize, k: usize, seed: u64) -> RatioSystem {
    let links: Vec<UserLink> = channels(m, n, k, seed).links();
    let h: Vec<CVector> = links.iter().map(|l| l.overall(&ones(n)).expect("dimensions")).collect();
    let olp = solve_olp(&h, 1.0, 1.0, OlpOptions::default()).expect("OLP");
    build_ratio_system(&olp.g, &olp.p, &links, 1.0).expect("ratio system")
}

pub fn dft_design(n: usize) -> TrainingDesign {
    TrainingDesign::dft(n + 1, n, 1.0, 5e-5, 5e-5).expect("DFT design")
}
