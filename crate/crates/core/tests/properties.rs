//! Property tests for the context, snapshot and reward invariants.

mod common;

use common::*;
use num_traits::{One, Zero};
use proptest::prelude::*;
use sawtooth_core::context::{render_context, SegmentKind};
use sawtooth_core::rational::Rational;
use sawtooth_core::reward::{compression_report, trajectory_reward, RewardConfig};
use sawtooth_core::snapshot::{audit_visibility, compile_snapshots};
use sawtooth_core::{Strategy, TokenCounter, WindowPolicy};

const WS: TokenCounter = TokenCounter::Whitespace;

fn kinds(ctx: &sawtooth_core::RenderedContext, kind: SegmentKind) -> Vec<usize> {
    ctx.segments.iter().filter(|s| s.kind == kind).map(|s| s.step_index).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamic_context_shows_exactly_the_window(seed in any::<u64>(), n in 0usize..8) {
        let traj = random_trajectory(&mut rng(seed), 0, 14);
        for t in 1..=traj.len() {
            let ctx = render_context(&traj, t, &Strategy::dynamic(n), &WS).unwrap();
            let want_r: Vec<usize> = (t.saturating_sub(n).max(1)..t).collect();
            prop_assert_eq!(kinds(&ctx, SegmentKind::Reasoning), want_r);
            prop_assert_eq!(kinds(&ctx, SegmentKind::Digest), (1..t).collect::<Vec<_>>());
            prop_assert_eq!(kinds(&ctx, SegmentKind::Action), (1..t).collect::<Vec<_>>());
            prop_assert_eq!(kinds(&ctx, SegmentKind::Observation), (1..=t).collect::<Vec<_>>());
            prop_assert_eq!(ctx.total_tokens, ctx.segments.iter().map(|s| s.token_count).sum::<usize>());
        }
    }

    #[test]
    fn degenerate_windows(seed in any::<u64>()) {
        let traj = random_trajectory(&mut rng(seed), 0, 12);
        for t in 1..=traj.len() {
            let zero = render_context(&traj, t, &Strategy::dynamic(0), &WS).unwrap();
            let current = render_context(&traj, t, &Strategy::CurrentStep, &WS).unwrap();
            prop_assert_eq!(&zero.segments, &current.segments);
            let wide = render_context(&traj, t, &Strategy::dynamic(traj.len()), &WS).unwrap();
            let full = render_context(&traj, t, &Strategy::Interleaved, &WS).unwrap();
            prop_assert_eq!(&wide.segments, &full.segments);
        }
    }

    #[test]
    fn compiled_snapshots_pass_audit(seed in any::<u64>(), lo in 0usize..4, span in 0usize..4) {
        let traj = random_trajectory(&mut rng(seed), 0, 12);
        let policy = WindowPolicy::uniform(lo.max(1), lo.max(1) + span, seed).unwrap();
        let set = compile_snapshots(&traj, &policy, &WS).unwrap();
        prop_assert_eq!(set.snapshots.len(), traj.len());
        prop_assert!((lo.max(1)..=lo.max(1) + span).contains(&set.window_used));
        let audit = audit_visibility(&set, &traj).unwrap();
        prop_assert!(audit.is_clean(), "{:?}", audit);
    }

    #[test]
    fn hybrid_length_monotone_in_window(seed in any::<u64>()) {
        let traj = random_trajectory(&mut rng(seed), 0, 16);
        let reports: Vec<_> = (0..=traj.len() + 1).map(|n| compression_report(&traj, n, &WS).unwrap()).collect();
        for w in reports.windows(2) {
            prop_assert!(w[0].l_hybrid <= w[1].l_hybrid);
            prop_assert!(w[0].r_comp >= w[1].r_comp);
        }
        for r in &reports {
            prop_assert!(r.r_comp >= Rational::zero() && r.r_comp <= Rational::one());
            prop_assert!(r.l_hybrid <= r.l_full);
        }
        prop_assert_eq!(reports.last().unwrap().l_hybrid, reports[0].l_full);
    }

    #[test]
    fn reward_bounds(seed in any::<u64>(), n in 0usize..6, b in 0i128..=100, g in 1i128..=100) {
        let traj = random_trajectory(&mut rng(seed), 0, 12);
        let report = compression_report(&traj, n, &WS).unwrap();
        let cfg = RewardConfig::new(Rational::new(b, 100), Rational::new(g, 100)).unwrap();
        let win = trajectory_reward(&report, true, &cfg);
        prop_assert!(win >= Rational::one());
        prop_assert!(win <= Rational::one() + cfg.beta * cfg.gamma);
        prop_assert_eq!(trajectory_reward(&report, false, &cfg), Rational::zero());
    }

    #[test]
    fn window_resolution_is_stable(seed in any::<u64>(), id in "[a-z0-9-]{1,12}") {
        let policy = WindowPolicy::uniform(2, 5, seed).unwrap();
        let n = policy.resolve(&id);
        prop_assert!((2..=5).contains(&n));
        prop_assert_eq!(n, policy.resolve(&id));
    }
}
