use otfs_core::channel::{effective_matrix, propagate, random_channel, PowerProfile};
use otfs_core::equalizer::MmseEqualizer;
use otfs_core::metrics::{map_bits, slice};
use otfs_core::modem::{demodulate_vec, modulate_vec};
use otfs_core::sim::runner::{run_with_workers, to_csv, trial_rng, CSV_HEADER};
use otfs_core::sim::Scenario;
use otfs_core::{ChannelMode, Constellation, DdChannel, FrameParams, Modulation, Scheme, SchemeConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(scheme: Scheme, m: usize, n: usize, cp: usize) -> SchemeConfig {
    let n = if scheme.single_slot() { 1 } else { n };
    SchemeConfig::new(scheme, FrameParams::new(m, n, 15e3).unwrap(), cp).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identity_channel_round_trip(
        scheme in prop::sample::select(Scheme::ALL.to_vec()),
        m in 1usize..12,
        n in 1usize..6,
        seed in any::<u64>(),
    ) {
        let cfg = config(scheme, m, n, m / 3);
        let c = Constellation::new(Modulation::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..cfg.block_len() * 4).map(|_| rand::Rng::random_range(&mut rng, 0..2u8)).collect();
        let s = modulate_vec(&cfg, &map_bits(&bits, &c).unwrap()).unwrap();
        let r = propagate(&s, &DdChannel::identity(), &cfg.params, ChannelMode::PerSlotCp).unwrap();
        prop_assert_eq!(slice(&demodulate_vec(&cfg, &r).unwrap(), &c), bits);
    }

    #[test]
    fn noiseless_mmse_inverts_any_channel(
        scheme in prop::sample::select(vec![Scheme::Otfs, Scheme::Ostf]),
        l_max in 1usize..4,
        v_max in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cfg = config(scheme, 8, 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = random_channel(l_max, v_max, &PowerProfile::Uniform, &cfg.params, &mut rng).unwrap();
        let c = Constellation::new(Modulation::Qpsk);
        let bits: Vec<u8> = (0..64).map(|_| rand::Rng::random_range(&mut rng, 0..2u8)).collect();
        let s = modulate_vec(&cfg, &map_bits(&bits, &c).unwrap()).unwrap();
        let y = demodulate_vec(&cfg, &propagate(&s, &ch, &cfg.params, ChannelMode::Cyclic).unwrap()).unwrap();
        let h = effective_matrix(&cfg, &ch, ChannelMode::Cyclic).unwrap();
        let eq = MmseEqualizer::new(&h.matrix, 0.0).unwrap();
        if !eq.pinv_fallback() {
            prop_assert_eq!(slice(&eq.equalize(&y).unwrap(), &c), bits);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn runner_output_depends_only_on_the_seed(seed in any::<u64>(), workers in 2usize..6) {
        let s = Scenario::from_toml_str(&format!(
            "seed = {seed}\ntrials = 12\nsnr_db_list = [3.0, 9.0]\nequalizer = \"mmse_dd\"\n[frame]\nM = 8\nN = 2\n[channel]\nrandom = {{ L_max = 2, V_max = 2 }}\n"
        ))
        .unwrap();
        let a = to_csv(&run_with_workers(&s, 1).unwrap());
        prop_assert_eq!(&a, &to_csv(&run_with_workers(&s, workers).unwrap()));
        prop_assert!(a.starts_with(CSV_HEADER));
    }
}

#[test]
fn trial_streams_do_not_overlap() {
    use rand::Rng;
    let mut seen = std::collections::HashSet::new();
    for snr in 0..4 {
        for trial in 0..64 {
            let mut rng = trial_rng(99, snr, trial);
            let first: [u64; 2] = [rng.random(), rng.random()];
            assert!(seen.insert(first), "stream ({snr}, {trial}) repeats another");
        }
    }
}

#[test]
fn noiseless_scenarios_have_no_errors() {
    for scheme in ["otfs", "ostf", "ofdm", "scfdma"] {
        let n = if matches!(scheme, "ofdm" | "scfdma") { 1 } else { 4 };
        let s = Scenario::from_toml_str(&format!(
            "scheme = \"{scheme}\"\nconstellation = \"16qam\"\nequalizer = \"one_tap_tf\"\ntrials = 5\nsnr_db_list = [inf]\n[frame]\nM = 16\nN = {n}\ncp_len = 3\n[channel]\nmode = \"per_slot_cp\"\ntaps = [{{ delay = 0, doppler = 0, gain = [0.9, 0.1] }}, {{ delay = 3, doppler = 0, gain = [0.2, -0.3] }}]\n"
        ))
        .unwrap();
        let r = run_with_workers(&s, 0).unwrap();
        assert_eq!(r[0].bit_errors, 0, "{scheme}");
        assert_eq!(r[0].trials, 5);
    }
}
