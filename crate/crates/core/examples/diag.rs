// Inspection utility: decomposes the online error of an existing case
// into its sources (projection floor, coefficient regression, source
// treatment, tensor contraction). Usage: diag <case-root> <day>.
use std::path::Path;
use urbanrom::pipeline::Case;
use urbanrom::rom::{self, SourcePath};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let case = Case::open(Path::new(&args[1]))?;
    let day: usize = args[2].parse()?;
    let red = case.cfg.reduction.clone();
    let n_deim = case.deim_size(red.n_deim)?;
    let ops = case.build_rom_operators(red.n_rb, n_deim, red.n_phi)?;
    let g = case.grid()?;
    let series = case.emissions()?;
    let schedule = case.schedule();
    let net = urbanrom::io::read_net(&case.root.join("net.bin"))?;
    let fom = case.load_fom_day(day)?;
    let t0 = day as f64 * case.cfg.fom.day_seconds;

    let exact_pi = |t: f64| {
        let f = case.flux_at(t, &schedule).unwrap();
        ops.psi.project(&f.convective_data()).unwrap()
    };
    let net_pi = |t: f64| {
        let (ux, uy) = schedule.velocity_at(t);
        net.predict(&[ux, uy]).unwrap()
    };

    let fomc = &case.cfg.fom;
    let run = |pi: &dyn Fn(f64) -> Vec<f64>, path: SourcePath| -> anyhow::Result<f64> {
        let deim = ops.deim.as_ref().unwrap();
        let traj = match path {
            SourcePath::Projection => rom::run_rom(
                &ops, pi, rom::projection_source(&ops.phi, g, &series),
                t0, fomc.day_seconds, fomc.dt, fomc.record_every)?,
            SourcePath::Deim => rom::run_rom(
                &ops, pi, rom::deim_source(deim, &series),
                t0, fomc.day_seconds, fomc.dt, fomc.record_every)?,
        };
        Ok(rom::evaluate(&fom, &traj, &ops.phi, 1.0)?.err_rb)
    };

    // projection error of the day itself onto phi
    let (prj, _) = ops.phi.projection_error_series(&fom.data, ops.n_rb())?;
    println!("day {day} projection floor        : {prj:.4e}");
    println!("exact pi + projection source : {:.4e}", run(&exact_pi, SourcePath::Projection)?);
    println!("exact pi + deim source       : {:.4e}", run(&exact_pi, SourcePath::Deim)?);
    println!("net   pi + projection source : {:.4e}", run(&net_pi, SourcePath::Projection)?);
    println!("net   pi + deim source       : {:.4e}", run(&net_pi, SourcePath::Deim)?);

    // how good is the net on this day's winds?
    let mut worst: f64 = 0.0;
    let mut mean = 0.0;
    let steps = (fomc.day_seconds / fomc.record_every).round() as usize;
    for k in 0..=steps {
        let t = t0 + k as f64 * fomc.record_every;
        let a = exact_pi(t);
        let b = net_pi(t);
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let r = d / na;
        worst = worst.max(r);
        mean += r;
    }
    println!("net pi rel error mean/worst  : {:.4e} / {:.4e}", mean / (steps + 1) as f64, worst);

    // contraction vs exactly assembled reduced convection at a few instants
    for k in [1usize, 8, 16, 24] {
        let t = t0 + k as f64 * fomc.record_every;
        let flux = case.flux_at(t, &schedule)?;
        let fops = urbanrom::fom::assemble_operators(g, case.cfg.fom.nu, &flux)?;
        let c = &fops.convection;
        let phi_m = &ops.phi.modes;
        let n = phi_m.ncols();
        let mut c_exact = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let col: Vec<f64> = phi_m.column(j).iter().copied().collect();
            let mut out = vec![0.0; col.len()];
            c.matvec(&col, &mut out);
            for i in 0..n {
                c_exact[(i, j)] = phi_m.column(i).iter().zip(&out).map(|(a, b)| a * b).sum();
            }
        }
        let pi = exact_pi(t);
        let c_contr = urbanrom::rom::contract_convection(&ops.gamma, &pi)?;
        let diff = (&c_exact - &c_contr).norm() / c_exact.norm();
        println!("t={t:>8.0}  |Cr_exact - Cr_contract|/|Cr_exact| = {diff:.4e}  pi = {pi:?}");
    }
    Ok(())
}
