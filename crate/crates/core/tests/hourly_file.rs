//! Two years of hourly data at 369 stations, written by a generator that
//! shares nothing with the loader.

use std::io::{BufWriter, Write};

use stfield::dataset::{load_csv, TimeKind};

fn days_in_month(year: u32, month: u32) -> u32 {
    match month {
        2 if year % 4 == 0 => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

#[test]
fn two_year_hourly_file() {
    let dir = tempfile::tempdir().unwrap();
    let stations = dir.path().join("stations.csv");
    let measurements = dir.path().join("measurements.csv");

    let mut s = BufWriter::new(std::fs::File::create(&stations).unwrap());
    writeln!(s, "station_id,x,y,altitude").unwrap();
    for i in 0..369 {
        writeln!(s, "st{i:03},{},{},{}", i % 20, i / 20, 400 + i).unwrap();
    }
    drop(s);

    let mut m = BufWriter::new(std::fs::File::create(&measurements).unwrap());
    writeln!(m, "station_id,time,value").unwrap();
    let mut hours = 0usize;
    for year in [2019, 2020] {
        for month in 1..=12 {
            for day in 1..=days_in_month(year, month) {
                for hour in 0..24 {
                    let stamp = format!("{year}-{month:02}-{day:02} {hour:02}:00");
                    for i in 0..369 {
                        writeln!(m, "st{i:03},{stamp},{}", (hours + i) % 7).unwrap();
                    }
                    hours += 1;
                }
            }
        }
    }
    drop(m);
    assert_eq!(hours, 17_544);

    let ds = load_csv(&stations, &measurements).unwrap();
    assert_eq!(ds.n_stations(), 369);
    assert_eq!(ds.n_times(), 17_544);
    assert_eq!(ds.missing_count(), 0);
    assert_eq!(ds.times().kind(), TimeKind::Timestamp);
    assert_eq!(ds.times().values()[1] - ds.times().values()[0], 3600);
    assert_eq!(ds.covariate_names(), ["x", "y", "altitude"]);
    assert_eq!(ds.values()[[5, 100]], ((100 + 5) % 7) as f64);
    assert_eq!(ds.times().label(17_543), "2020-12-31T23:00:00");
}
