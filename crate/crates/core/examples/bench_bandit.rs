use adarch::bandit::*;
use adarch::data::{encode_mushroom, synth_mushroom_file};
use std::time::Instant;

fn main() {
    let dir = std::env::temp_dir();
    let path = dir.join("bench_mushrooms.csv");
    synth_mushroom_file(&path, 8124, 42).unwrap();
    let data = encode_mushroom(&path).unwrap();
    println!("context dim: {}", data.contexts.cols());
    let mut env = MushroomBandit::new(data, 1).unwrap();

    for kind in [AgentKind::ThompsonAdaptive, AgentKind::ThompsonRigid, AgentKind::EpsilonGreedy{epsilon: 0.05}] {
        let mut agent = BanditAgent::new(kind.clone(), AgentSettings::default(), env.context_dim(), 2).unwrap();
        // prefill buffer to steady state
        for _ in 0..4096 {
            let idx = env.draw_context();
            let ctx = env.context_row(idx);
            agent.buffer.push(Experience{
                context: ctx.data().to_vec(), context_id: idx, action: Action::Consume,
                reward: env.realized_reward(idx, Action::Consume),
                expected_reward: expected_reward(env.label(idx), Action::Consume)});
        }
        let t = Instant::now();
        let n = 5;
        let recs = run_bandit(&mut env, &mut agent, n, 512).unwrap();
        let per_step = t.elapsed().as_secs_f64() / n as f64;
        println!("{:20} {:.3} s/step at full buffer -> {:.1} min per 5000-step run (upper bound)",
                 kind.name(), per_step, per_step * 5000.0 / 60.0);
        assert!(recs.len() == n);
    }
}
