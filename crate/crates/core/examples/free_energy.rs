//! Variational and expected free energy of a two-state model, each computed
//! in both decompositions.

use aif_core::generative::{
    compute_efe, compute_vfe, enumerate_policies, rank_policies, update_belief, CategoricalDist, GenerativeModel,
    LikelihoodModel, PreferenceModel, PriorBelief, TransitionModel,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s: Vec<String> = ["dry", "raining"].map(String::from).to_vec();
    let o: Vec<String> = ["sun", "clouds"].map(String::from).to_vec();
    let a = LikelihoodModel::from_matrix(
        &o,
        &[vec![0.85, 0.15], vec![0.25, 0.75]],
        vec!["dry days are mostly sunny".into(), "rain comes with clouds".into()],
    )?;
    let b = TransitionModel::from_matrices(
        &s,
        vec!["wait".into(), "seed_clouds".into()],
        &[vec![vec![0.9, 0.1], vec![0.3, 0.7]], vec![vec![0.4, 0.6], vec![0.1, 0.9]]],
        vec!["weather persists".into(), "seeding brings rain".into()],
    )?;
    let c = PreferenceModel::new(o.clone(), vec![0.0, 1.5], Default::default(), vec![], 1.0)?;
    let d = PriorBelief::new(CategoricalDist::new(s, vec![0.7, 0.3])?, vec!["mostly dry season".into()]);
    let model = GenerativeModel::new(a, b, c, d)?;

    let prior = model.prior().dist.clone();
    let posterior = update_belief(&prior, model.likelihood(), "clouds")?;
    for (name, q) in [("prior", &prior), ("posterior", &posterior)] {
        let r = compute_vfe(q, &model, "clouds")?;
        println!("F at {name:<9} {:.6} | {:.6}  consensus={}", r.f_form1, r.f_form2, r.consensus);
        println!("  {}", r.narrative_form1);
        println!("  {}", r.narrative_form2);
    }

    let reports = enumerate_policies(&model, 2)?
        .iter()
        .map(|p| compute_efe(p, &model, &posterior))
        .collect::<Result<Vec<_>, _>>()?;
    for ranked in rank_policies(&reports, false)? {
        let r = &reports[ranked.policy.id];
        println!("G {:<24} {:.6} | {:.6}", ranked.policy.actions.join(","), r.g_form1, r.g_form2);
    }
    Ok(())
}
