//! `lin(start,stop,count)` axis lists, comma-separated per dimension.

use gsmgp::data::linspace;

pub fn parse_grid_spec(spec: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut axes = Vec::new();
    let mut rest = spec.trim();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix("lin(")
            .ok_or_else(|| format!("expected 'lin(' at '{rest}'"))?;
        let close = body.find(')').ok_or("unclosed 'lin('")?;
        let fields: Vec<&str> = body[..close].split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(format!(
                "lin() takes start,stop,count, got '{}'",
                &body[..close]
            ));
        }
        let start: f64 = fields[0]
            .parse()
            .map_err(|_| format!("bad start '{}'", fields[0]))?;
        let stop: f64 = fields[1]
            .parse()
            .map_err(|_| format!("bad stop '{}'", fields[1]))?;
        let count: usize = fields[2]
            .parse()
            .map_err(|_| format!("bad count '{}'", fields[2]))?;
        if !start.is_finite() || !stop.is_finite() {
            return Err("lin() bounds must be finite".into());
        }
        axes.push(linspace(start, stop, count));
        rest = body[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
            if rest.is_empty() {
                return Err("trailing comma in grid spec".into());
            }
        } else if !rest.is_empty() {
            return Err(format!("unexpected '{rest}' in grid spec"));
        }
    }
    if axes.is_empty() {
        return Err("empty grid spec".into());
    }
    Ok(axes)
}
