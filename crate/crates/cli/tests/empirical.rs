use std::path::PathBuf;

use hdbreak::design::build_ar_design;
use hdbreak_cli::dataset::{
    growth_rate, ingest_csv, read_dataset, Dataset, Frequency, OilTransform, SchemaHints, TimeKey,
};
use hdbreak_cli::empirical::{
    empirical_panel, oil_series, run_empirical, run_panel_tests, EmpiricalSpec, Model, TestSettings,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn fred() -> Dataset {
    ingest_csv(&fixture("fred_quarterly.csv"), &SchemaHints::default()).unwrap()
}

fn key(s: &str) -> TimeKey {
    s.parse().unwrap()
}

struct Golden {
    index: Vec<TimeKey>,
    gdp: Vec<f64>,
    oil: Vec<f64>,
    net: Vec<Option<f64>>,
}

fn golden() -> Golden {
    let mut rdr = csv::Reader::from_path(fixture("fred_quarterly_golden.csv")).unwrap();
    let mut g = Golden {
        index: vec![],
        gdp: vec![],
        oil: vec![],
        net: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.unwrap();
        g.index.push(key(&rec[0]));
        g.gdp.push(rec[1].parse().unwrap());
        g.oil.push(rec[2].parse().unwrap());
        g.net.push(if rec[3].is_empty() {
            None
        } else {
            Some(rec[3].parse().unwrap())
        });
    }
    g
}

fn quick_settings() -> TestSettings {
    TestSettings {
        bootstrap: 20,
        draws: 400,
        integration_points: 50,
        ..TestSettings::default()
    }
}

#[test]
fn fred_sample_parses_to_known_values() {
    let d = fred();
    assert_eq!(d.len(), 292);
    assert_eq!(d.frequency, Frequency::Quarterly);
    assert_eq!(d.names, ["GDPC1", "WTISPLC"]);
    assert_eq!(d.index[0], key("1947-01-01"));
    assert_eq!(d.index[291], key("2019Q4"));
    assert_eq!(d.column("GDPC1").unwrap()[0], 2033.061);
    assert_eq!(d.column("GDPC1").unwrap()[1], 2044.677);
    assert_eq!(d.column("WTISPLC").unwrap()[291], 11.19);
    assert_eq!(d.column("GDPC1").unwrap()[291], 23866.63);
}

#[test]
fn growth_rates_match_golden_values() {
    let d = fred();
    let g = golden();
    let gdp = growth_rate(d.column("GDPC1").unwrap()).unwrap();
    let oil = growth_rate(d.column("WTISPLC").unwrap()).unwrap();
    assert_eq!(gdp.len(), g.gdp.len());
    assert_eq!(&d.index[1..], g.index.as_slice());
    for i in 0..gdp.len() {
        assert!((gdp[i] - g.gdp[i]).abs() < 1e-10, "row {i}");
        assert!((oil[i] - g.oil[i]).abs() < 1e-10, "row {i}");
    }
}

#[test]
fn net_oil_increase_matches_golden_values() {
    let d = fred();
    let g = golden();
    let net = oil_series(d.column("WTISPLC").unwrap(), OilTransform::ONet, 4).unwrap();
    assert_eq!(net.len(), d.len());
    assert!(net[..4].iter().all(Option::is_none));
    for (i, want) in g.net.iter().enumerate() {
        match (net[i + 1], want) {
            (None, None) => {}
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10, "row {i}: {a} vs {b}"),
            other => panic!("row {i}: {other:?}"),
        }
    }
}

#[test]
fn restriction_counts() {
    let d = fred();
    for (model, p, q) in [
        (Model::Ar, 12, 13),
        (Model::Ar, 18, 19),
        (Model::Adl, 12, 25),
        (Model::Adl, 18, 37),
    ] {
        let spec = EmpiricalSpec {
            model,
            p,
            oil: Some("WTISPLC".into()),
            ..EmpiricalSpec::default()
        };
        let (panel, _) = empirical_panel(&d, &spec).unwrap();
        assert_eq!(panel.ncols(), q, "{model:?}({p})");
    }
}

#[test]
fn subsamples_anchor_on_quarters() {
    let d = fred();
    let sub1 = d
        .subsample(Some(key("1981:I")), Some(key("2019:IV")))
        .unwrap();
    assert_eq!(sub1.index[0], key("1981Q1"));
    assert_eq!(*sub1.index.last().unwrap(), key("2019-10-01"));
    let sub2 = d
        .subsample(Some(key("1950:I")), Some(key("2007:II")))
        .unwrap();
    assert_eq!(sub2.index[0], key("1950-01-01"));
    assert_eq!(*sub2.index.last().unwrap(), key("2007Q2"));
    assert_eq!(d.subsample(None, None).unwrap().index, d.index);

    let spec = EmpiricalSpec {
        p: 12,
        start: Some(key("1981:I")),
        end: Some(key("2019:IV")),
        ..EmpiricalSpec::default()
    };
    let (panel, [a, b]) = empirical_panel(&d, &spec).unwrap();
    assert_eq!((a, b), (key("1981Q1"), key("2019Q4")));
    assert_eq!(panel.nobs(), sub1.len());
}

#[test]
fn empty_subsample_is_an_error() {
    let d = fred();
    assert!(d.subsample(Some(key("2030Q1")), None).is_err());
}

#[test]
fn run_empirical_equals_manual_composition() {
    let d = fred();
    let spec = EmpiricalSpec {
        p: 4,
        start: Some(key("1981:I")),
        settings: quick_settings(),
        ..EmpiricalSpec::default()
    };
    let report = run_empirical(&d, &spec, None).unwrap();

    let levels = d.column("GDPC1").unwrap();
    let first = d.index.iter().position(|k| *k == key("1981Q1")).unwrap();
    let g = growth_rate(&levels[first - 5..]).unwrap();
    let panel = build_ar_design(&g, 4).unwrap();
    let manual = run_panel_tests(&panel, &spec.settings, None).unwrap();

    assert_eq!(report.nobs, manual.nobs);
    assert_eq!(report.restrictions, 5);
    assert_eq!(
        report.exph.statistic.to_bits(),
        manual.exph.statistic.to_bits()
    );
    assert_eq!(report.exph.pvalue, manual.exph.pvalue);
    assert_eq!(
        report.supw.statistic.to_bits(),
        manual.supw.statistic.to_bits()
    );
    assert_eq!(report.supw.pvalue, manual.supw.pvalue);
    assert_eq!(
        report.sample,
        Some(["1981-01-01".to_string(), "2019-10-01".to_string()])
    );
}

#[test]
fn missing_values_in_used_columns_are_rejected() {
    let text = "DATE,A,B\n2000-01-01,1,.\n2000-04-01,2,3\n2000-07-01,3,4\n";
    let hints = SchemaHints {
        required: Some(vec!["B".into()]),
        ..SchemaHints::default()
    };
    let err = read_dataset(text.as_bytes(), &hints).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}
