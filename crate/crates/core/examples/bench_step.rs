use ptr_core::bench::corrupt::{apply_corruption, CorruptionMode};
use ptr_core::bench::eval::evaluate_policy;
use ptr_core::bench::train::Trainer;
use ptr_core::bench::world::generate_world;
use ptr_core::config::RunConfig;

fn main() {
    let mut steps = 2000usize;
    let mut lr = 1e-3;
    let mut mode = CorruptionMode::None;
    let mut seeds = vec![0u64];
    let mut tasks = 0usize; // 0 = keep default
    let mut kp = 0.0; // 0 = keep default
    let mut force_uniform = false;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--steps" => steps = args[i + 1].parse().unwrap(),
            "--lr" => lr = args[i + 1].parse().unwrap(),
            "--mode" => {
                mode = if args[i + 1] == "combined" {
                    CorruptionMode::Combined
                } else {
                    CorruptionMode::None
                }
            }
            "--seeds" => {
                seeds = args[i + 1].split(',').map(|s| s.parse().unwrap()).collect()
            }
            "--tasks" => tasks = args[i + 1].parse().unwrap(),
            "--kp" => kp = args[i + 1].parse().unwrap(),
            "--uniform" => {
                force_uniform = true;
                i -= 1;
            }
            other => panic!("unknown arg {other}"),
        }
        i += 2;
    }
    for &seed in &seeds {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.train.steps = steps;
        cfg.train.lr = lr;
        cfg.train.force_uniform = force_uniform;
        cfg.corruption.mode = mode;
        if tasks > 0 {
            cfg.world.n_tasks = tasks;
        }
        if kp > 0.0 {
            cfg.world.kp = kp;
        }
        let ds = generate_world(&cfg.world, seed).unwrap();
        let ds = apply_corruption(&ds, &cfg.corruption, &cfg.world, seed).unwrap();
        let t0 = std::time::Instant::now();
        let mut tr = Trainer::new(&cfg).unwrap();
        tr.train(&ds, None).unwrap();
        let eval = evaluate_policy(&tr.policy, &cfg.world, &cfg.eval, seed).unwrap();
        let last = tr.rows.last().unwrap();
        println!(
            "seed {seed} steps {steps} lr {lr} {mode:?} uniform={force_uniform}: success {:.3} dist {:.4} mse {:.5} loss_act {:.4} nce_acc {:.3} ema_t {:.4} ({:.0}s)",
            eval.success_rate,
            eval.mean_final_distance,
            eval.chunk_mse,
            last.loss_act_unweighted,
            last.nce_acc,
            last.ema_t,
            t0.elapsed().as_secs_f64()
        );

        // Open-loop fit: denoise conditioned on training records (chunk 0,
        // source 0) and compare to the recorded commands, normalized units.
        use ptr_core::numerics::{rng::phase, SeededRng};
        let z0 = tr.policy.tokenizer.z_init().to_vec();
        let mut se = 0.0;
        let mut var = 0.0;
        let mut n = 0usize;
        let mut mean = 0.0;
        let picks: Vec<_> = ds
            .records
            .iter()
            .filter(|r| r.chunk_index == 0 && r.source_id == 0)
            .take(100)
            .collect();
        for r in &picks {
            for i in 0..r.action_chunk.rows() {
                for j in 0..r.action_chunk.cols() {
                    mean += r.action_chunk.get(i, j) / cfg.world.a_max;
                    n += 1;
                }
            }
        }
        mean /= n as f64;
        let mut rng = SeededRng::stream(seed, phase::EVAL, 999_999);
        for r in &picks {
            let (chunk, _) = tr
                .policy
                .plan(&r.obs, &r.state, r.task_id, &z0, 4, &mut rng)
                .unwrap();
            for i in 0..chunk.rows() {
                for j in 0..chunk.cols() {
                    let a = r.action_chunk.get(i, j) / cfg.world.a_max;
                    let p = chunk.get(i, j) / cfg.world.a_max;
                    se += (p - a) * (p - a);
                    var += (a - mean) * (a - mean);
                }
            }
        }
        println!(
            "  openloop: mse {:.4} var {:.4} r2 {:.3} over {} records",
            se / n as f64,
            var / n as f64,
            1.0 - se / var,
            picks.len()
        );

        // Trace: one eval episode per task, positions at chunk ends.
        use ptr_core::bench::world::{obs_features, proprio_state, world_step};
        for task in 0..cfg.world.n_tasks.min(2) {
            let goal = cfg.world.goal(task);
            let mut erng = SeededRng::stream(seed, phase::EVAL, 700_000 + task as u64);
            let mut p = [
                erng.uniform_in(-cfg.world.start_box, cfg.world.start_box),
                erng.uniform_in(-cfg.world.start_box, cfg.world.start_box),
            ];
            let mut z = tr.policy.tokenizer.z_init().to_vec();
            print!(
                "  task {task} goal ({:+.2},{:+.2}) start ({:+.2},{:+.2}):",
                goal[0], goal[1], p[0], p[1]
            );
            for _ in 0..cfg.eval.horizon_chunks {
                let (chunk, zn) = tr
                    .policy
                    .plan(&obs_features(p), &proprio_state(p), task, &z, 4, &mut erng)
                    .unwrap();
                z = zn;
                let mut amean = [0.0, 0.0];
                for i in 0..chunk.rows() {
                    amean[0] += chunk.get(i, 0) / 16.0 / cfg.world.a_max;
                    amean[1] += chunk.get(i, 1) / 16.0 / cfg.world.a_max;
                    p = world_step(
                        p,
                        [chunk.get(i, 0), chunk.get(i, 1)],
                        [0.0, 0.0],
                        cfg.world.a_max,
                    );
                }
                print!(" ({:+.2},{:+.2})a({:+.1},{:+.1})", p[0], p[1], amean[0], amean[1]);
            }
            println!();
        }
    }
}
