use proptest::prelude::*;
use tmgan::trainer::{run_alternating, AlternatingObjective, TrainingLog};
use tmgan::Result;

/// Discriminator loss follows a fixed script per step; each update advances one position.
struct Scripted {
    losses: Vec<f64>,
    pos: usize,
    disc_steps: usize,
    gen_steps: usize,
    with_disc: bool,
}

impl Scripted {
    fn new(losses: Vec<f64>) -> Self {
        Self {
            losses,
            pos: 0,
            disc_steps: 0,
            gen_steps: 0,
            with_disc: true,
        }
    }
}

impl AlternatingObjective for Scripted {
    fn begin_step(&mut self, _step: usize) -> Result<()> {
        self.pos = 0;
        Ok(())
    }
    fn uses_discriminator(&self) -> bool {
        self.with_disc
    }
    fn discriminator_loss(&mut self) -> Result<f64> {
        Ok(self.losses[self.pos.min(self.losses.len() - 1)])
    }
    fn discriminator_step(&mut self) -> Result<()> {
        self.disc_steps += 1;
        self.pos += 1;
        Ok(())
    }
    fn generator_step(&mut self) -> Result<f64> {
        self.gen_steps += 1;
        Ok(1.0)
    }
    fn gamma(&self) -> f64 {
        1.0
    }
}

proptest! {
    #[test]
    fn loss_at_or_below_threshold_skips_the_discriminator(t_d in 0.0f64..2.0, n_d in 1usize..8, steps in 1usize..6, below in 0.0f64..1.0) {
        let mut obj = Scripted::new(vec![t_d * below]);
        let mut log = TrainingLog::default();
        run_alternating(&mut obj, t_d, n_d, 0, steps, &mut log, |_| {}).unwrap();
        prop_assert_eq!(obj.disc_steps, 0);
        prop_assert_eq!(obj.gen_steps, steps);
        prop_assert!(log.records.iter().all(|r| r.n_d == 0));
    }

    #[test]
    fn loss_above_threshold_hits_the_cap(t_d in 0.0f64..2.0, n_d in 0usize..8, steps in 1usize..6, excess in 1e-9f64..5.0) {
        let mut obj = Scripted::new(vec![t_d + excess]);
        let mut log = TrainingLog::default();
        run_alternating(&mut obj, t_d, n_d, 0, steps, &mut log, |_| {}).unwrap();
        prop_assert_eq!(obj.disc_steps, n_d * steps);
        prop_assert_eq!(log.records.len(), steps);
        prop_assert!(log.records.iter().all(|r| r.n_d == n_d));
    }

    #[test]
    fn inner_loop_stops_when_loss_drops(t_d in 0.1f64..2.0, n_d in 1usize..8, k in 0usize..8) {
        // k updates above the threshold, then one at it
        let mut script = vec![t_d + 1.0; k];
        script.push(t_d);
        let mut obj = Scripted::new(script);
        let mut log = TrainingLog::default();
        run_alternating(&mut obj, t_d, n_d, 0, 3, &mut log, |_| {}).unwrap();
        prop_assert!(log.records.iter().all(|r| r.n_d == k.min(n_d)));
    }
}

#[test]
fn records_cover_the_requested_range() {
    let mut obj = Scripted::new(vec![0.0]);
    let mut log = TrainingLog::default();
    let mut seen = Vec::new();
    run_alternating(&mut obj, 0.2, 1, 4, 9, &mut log, |r| seen.push(r.step)).unwrap();
    assert_eq!(seen, vec![4, 5, 6, 7, 8]);
    assert_eq!(log.records.iter().map(|r| r.step).collect::<Vec<_>>(), seen);
}

#[test]
fn without_discriminator_nothing_is_logged_for_it() {
    let mut obj = Scripted::new(vec![10.0]);
    obj.with_disc = false;
    let mut log = TrainingLog::default();
    run_alternating(&mut obj, 0.2, 5, 0, 3, &mut log, |_| {}).unwrap();
    assert_eq!(obj.disc_steps, 0);
    assert!(log.records.iter().all(|r| r.disc_loss.is_none() && r.n_d == 0));
}

#[test]
fn non_finite_losses_abort_with_the_partial_log() {
    struct Blowup(usize);
    impl AlternatingObjective for Blowup {
        fn begin_step(&mut self, step: usize) -> Result<()> {
            self.0 = step;
            Ok(())
        }
        fn uses_discriminator(&self) -> bool {
            false
        }
        fn discriminator_loss(&mut self) -> Result<f64> {
            unreachable!()
        }
        fn discriminator_step(&mut self) -> Result<()> {
            unreachable!()
        }
        fn generator_step(&mut self) -> Result<f64> {
            Ok(if self.0 == 2 { f64::NAN } else { 0.5 })
        }
        fn gamma(&self) -> f64 {
            1.0
        }
    }
    let mut log = TrainingLog::default();
    match run_alternating(&mut Blowup(0), 0.2, 1, 0, 5, &mut log, |_| {}) {
        Err(tmgan::trainer::TrainError::NonFinite { step, log, .. }) => {
            assert_eq!(step, 2);
            assert_eq!(log.records.len(), 2);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}
