use cthmm::diffusion::{
    em_update_linear, particle_filter, particle_smoother, FitOptions, ParticleOptions,
    UpdateRule,
};
use cthmm::sde_models::{euler_maruyama_simulate_substeps, lorenz96};
use nalgebra::DVector;

#[test]
#[ignore]
fn iteration_map_from_various_theta() {
    let model = lorenz96(10).unwrap();
    let path = euler_maruyama_simulate_substeps(&model, 1.0, 0.05, 10, 99).unwrap();
    let obs = path.observations().unwrap();
    for &f0 in &[0.0, 4.0, 8.0, 12.0, 16.0, 26.0] {
        for it in 0..3u32 {
            let m = model
                .with_theta(DVector::from_element(1, f0))
                .unwrap();
            let opts = ParticleOptions {
                n_particles: 128,
                seed: 5,
                resampling: Default::default(),
                iteration: it,
                propagation_substeps: 10,
            };
            let mut ens = match particle_filter(&m, &obs, &opts) {
                Ok(e) => e,
                Err(e) => {
                    println!("F = {f0:6.2} rep {it}: filter failed: {e}");
                    continue;
                }
            };
            if let Err(e) = particle_smoother(&mut ens, &m, &obs) {
                println!("F = {f0:6.2} rep {it}: smoother failed: {e}");
                continue;
            }
            let n = 128usize;
            let maxpos = ens
                .positions_at(0)
                .iter()
                .chain(ens.positions_at(obs.n_steps()).iter())
                .flat_map(|x| x.iter())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let grads = ens.beta_gradients.as_ref().unwrap();
            let gmax = grads
                .iter()
                .flat_map(|g: &DVector<f64>| g.iter())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let allpos = (0..=obs.n_steps())
                .flat_map(|k| ens.positions_at(k).iter())
                .flat_map(|x| x.iter())
                .fold(0.0f64, |a, v| a.max(v.abs()));
            match em_update_linear(&ens, &m, &obs) {
                Ok(upd) => println!(
                    "F = {f0:6.2} rep {it}: F' = {:12.4} cloud_max = {allpos:10.3e} gmax = {gmax:10.3e} endpos = {maxpos:8.2}",
                    upd.theta[0]
                ),
                Err(e) => println!("F = {f0:6.2} rep {it}: update failed: {e}"),
            }
        }
    }
    let _ = FitOptions::new(1, 1, 0, UpdateRule::Linear);
}
