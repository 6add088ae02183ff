use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smore_core::agents::{AgentConfig, AgentKind, Trainer};
use smore_core::data::{collect_dataset, CollectConfig};
use smore_core::eval::mann_whitney_u;
use smore_core::mdp::{build_gridworld, random_mdp, solve_occupancy};
use smore_core::nn::Matrix;
use smore_core::occupancy::{frank_wolfe_primal, uniform_active_rho, FrankWolfeConfig};
use smore_core::{DenseNet, EnvSpec, FDivergence, MixtureProblem, Policy};

fn dense_net(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // One-hot state, action and goal for gridworld(5): 25 + 5 + 25 inputs.
    let net = DenseNet::<f32>::new(&[55, 64, 64, 1], &mut rng).unwrap();
    let x = Matrix::new(64, 55, (0..64 * 55).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let up = Matrix::new(64, 1, vec![1.0; 64]).unwrap();
    let mut grad = vec![0.0f32; net.n_params()];
    c.bench_function("mlp_forward_64x55", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    c.bench_function("mlp_forward_backward_64x55", |b| {
        b.iter(|| {
            let tape = net.forward_train(black_box(&x)).unwrap();
            net.backward(&tape, &up, &mut grad, false).unwrap()
        })
    });
}

fn agent_steps(c: &mut Criterion) {
    let env = EnvSpec::gridworld(5, 0.0);
    let mdp = env.build().unwrap();
    let data = collect_dataset(&env, &CollectConfig::default()).unwrap();
    let mut group = c.benchmark_group("train_step");
    for kind in AgentKind::ALL {
        let mut trainer = Trainer::new(kind, &mdp, AgentConfig::desk(), 0).unwrap();
        group.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| trainer.step(&mdp, &data).unwrap())
        });
    }
    group.finish();
}

fn occupancy(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_occupancy");
    for side in [3, 5, 7] {
        let mdp = build_gridworld(side, 0.1).unwrap();
        let policy = Policy::uniform(&mdp);
        group.bench_function(BenchmarkId::from_parameter(format!("gridworld{side}")), |b| {
            b.iter(|| solve_occupancy(&mdp, black_box(&policy)).unwrap())
        });
    }
    group.finish();
}

fn frank_wolfe(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let mdp = random_mdp(&mut rng, 6, 3, 2, 0.8).unwrap();
    let rho = uniform_active_rho(&mdp);
    let problem = MixtureProblem::new(mdp, rho, 0.5).unwrap();
    let config = FrankWolfeConfig::default();
    c.bench_function("frank_wolfe_random6", |b| {
        b.iter(|| frank_wolfe_primal(&problem, &FDivergence::Chi2, &config).unwrap())
    });
}

fn mann_whitney(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>();
    let (a5, b5) = (draw(5), draw(5));
    let (a20, b20) = (draw(20), draw(20));
    let (a100, b100) = (draw(100), draw(100));
    c.bench_function("mann_whitney_exact_5x5", |b| b.iter(|| mann_whitney_u(&a5, &b5).unwrap()));
    c.bench_function("mann_whitney_exact_20x20", |b| b.iter(|| mann_whitney_u(&a20, &b20).unwrap()));
    c.bench_function("mann_whitney_normal_100x100", |b| b.iter(|| mann_whitney_u(&a100, &b100).unwrap()));
}

criterion_group!(benches, dense_net, agent_steps, occupancy, frank_wolfe, mann_whitney);
criterion_main!(benches);
