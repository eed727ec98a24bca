use gradsel::experiments::{gen_mixture, rescale_to_unit};
use gradsel::grids::{build_net, clustering_bounds, spatial_grid};
use gradsel::kernels::{KernelSpec, NoiseModel};
use gradsel::noisy_kmeans::{KmeansPipeline, NoisySample};
use std::time::Instant;

fn main() {
    let u = 10.0;
    let data = gen_mixture(200, u, 99);
    let (zs, map) = rescale_to_unit(&data.z, 0.05);
    let noise = NoiseModel::gaussian(
        vec![1.0 / map.scale[0], u.sqrt() / map.scale[1]],
        vec![1.0, 1.0],
    );
    let (hm, hp, _) = clustering_bounds(200, &[1.0, 1.0], 2.0);
    let net = build_net(hm, hp, 0.7, 2, 200).unwrap();
    println!("net size {}", net.len());
    let grid = spatial_grid(2, 128).unwrap();
    let sample = NoisySample::new(zs).unwrap();
    let t = Instant::now();
    let pipe = KmeansPipeline::new(&sample, &KernelSpec::sinc(2), &noise, &net, 2, &grid, 5).unwrap();
    println!("pipeline build: {:?}", t.elapsed());
    let t = Instant::now();
    for c in [0.1, 1.0, 10.0] {
        let _ = pipe.select(c, 1).unwrap();
        let _ = pipe.erc_select(c).unwrap();
    }
    println!("6 selections: {:?}", t.elapsed());
}
