use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MixtureDdcModel;
use crate::{Error, Result};

/// Rectangular panel of markets observed for `T` periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    n_markets: usize,
    n_periods: usize,
    n_firms: usize,
    /// `[market][period]`.
    states: Vec<usize>,
    /// `[market][period][firm]`.
    actions: Vec<usize>,
    /// Latent type of each market when known (simulated data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    types: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    market: usize,
    period: usize,
    firm: usize,
    state_index: usize,
    action: usize,
}

impl PanelData {
    pub fn new(
        n_markets: usize,
        n_periods: usize,
        n_firms: usize,
        states: Vec<usize>,
        actions: Vec<usize>,
        types: Option<Vec<usize>>,
    ) -> Result<Self> {
        if n_markets == 0 || n_periods == 0 || n_firms == 0 {
            return Err(Error::InvalidInput("panel must have markets, periods and firms".into()));
        }
        if states.len() != n_markets * n_periods {
            return Err(Error::dims("panel states", n_markets * n_periods, states.len()));
        }
        if actions.len() != n_markets * n_periods * n_firms {
            return Err(Error::dims("panel actions", n_markets * n_periods * n_firms, actions.len()));
        }
        if let Some(t) = &types {
            if t.len() != n_markets {
                return Err(Error::dims("panel types", n_markets, t.len()));
            }
        }
        Ok(PanelData {
            n_markets,
            n_periods,
            n_firms,
            states,
            actions,
            types,
        })
    }

    pub fn n_markets(&self) -> usize {
        self.n_markets
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_firms(&self) -> usize {
        self.n_firms
    }

    pub fn state(&self, market: usize, period: usize) -> usize {
        self.states[market * self.n_periods + period]
    }

    pub fn action(&self, market: usize, period: usize, firm: usize) -> usize {
        self.actions[(market * self.n_periods + period) * self.n_firms + firm]
    }

    /// States of one market across periods.
    pub fn market_states(&self, market: usize) -> &[usize] {
        &self.states[market * self.n_periods..(market + 1) * self.n_periods]
    }

    /// Actions of one market, `[period][firm]`.
    pub fn market_actions(&self, market: usize) -> &[usize] {
        let len = self.n_periods * self.n_firms;
        &self.actions[market * len..(market + 1) * len]
    }

    pub fn types(&self) -> Option<&[usize]> {
        self.types.as_deref()
    }

    /// Sub-panel with the given markets, in order (used for resampling).
    pub fn select_markets(&self, markets: &[usize]) -> Result<Self> {
        let mut states = Vec::with_capacity(markets.len() * self.n_periods);
        let mut actions = Vec::with_capacity(markets.len() * self.n_periods * self.n_firms);
        for &i in markets {
            if i >= self.n_markets {
                return Err(Error::InvalidInput(format!("market {i} out of range")));
            }
            states.extend_from_slice(self.market_states(i));
            actions.extend_from_slice(self.market_actions(i));
        }
        let types = self.types.as_ref().map(|t| markets.iter().map(|&i| t[i]).collect());
        PanelData::new(markets.len(), self.n_periods, self.n_firms, states, actions, types)
    }

    /// Checks every index against the model's state and action spaces.
    pub fn validate_against(&self, model: &MixtureDdcModel) -> Result<()> {
        if self.n_firms != model.n_firms() {
            return Err(Error::dims("panel firm count", model.n_firms(), self.n_firms));
        }
        if let Some(i) = self.states.iter().position(|&x| x >= model.n_states()) {
            return Err(Error::InvalidInput(format!(
                "state index {} at observation {i} exceeds the state space size {}",
                self.states[i],
                model.n_states()
            )));
        }
        if let Some(i) = self.actions.iter().position(|&a| a >= model.n_actions()) {
            return Err(Error::InvalidInput(format!(
                "action {} at entry {i} exceeds the action count {}",
                self.actions[i],
                model.n_actions()
            )));
        }
        Ok(())
    }

    /// Writes the columnar format `market,period,firm,state_index,action`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.n_markets {
            for t in 0..self.n_periods {
                for j in 0..self.n_firms {
                    w.serialize(Row {
                        market: i,
                        period: t,
                        firm: j,
                        state_index: self.state(i, t),
                        action: self.action(i, t, j),
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the columnar format. Markets and periods must form a complete
    /// rectangle indexed from zero; row numbers in errors count the header as row 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Parse {
                row: i + 2,
                message: e.to_string(),
            })?;
            rows.push((i + 2, row));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                row: 1,
                message: "panel file has no observations".into(),
            });
        }
        let n_markets = rows.iter().map(|(_, r)| r.market).max().unwrap_or(0) + 1;
        let n_periods = rows.iter().map(|(_, r)| r.period).max().unwrap_or(0) + 1;
        let n_firms = rows.iter().map(|(_, r)| r.firm).max().unwrap_or(0) + 1;
        let cells = n_markets * n_periods;
        let mut states: Vec<Option<usize>> = vec![None; cells];
        let mut actions: Vec<Option<usize>> = vec![None; cells * n_firms];
        for (line, r) in &rows {
            let cell = r.market * n_periods + r.period;
            match states[cell] {
                Some(s) if s != r.state_index => {
                    return Err(Error::Parse {
                        row: *line,
                        message: format!(
                            "state {} conflicts with state {s} recorded for market {} period {}",
                            r.state_index, r.market, r.period
                        ),
                    })
                }
                _ => states[cell] = Some(r.state_index),
            }
            let slot = &mut actions[cell * n_firms + r.firm];
            if slot.is_some() {
                return Err(Error::Parse {
                    row: *line,
                    message: format!("duplicate observation for market {} period {} firm {}", r.market, r.period, r.firm),
                });
            }
            *slot = Some(r.action);
        }
        let missing = |idx: usize| {
            let cell = idx / n_firms;
            Error::Parse {
                row: rows.len() + 1,
                message: format!(
                    "panel is not rectangular: market {} period {} firm {} is missing",
                    cell / n_periods,
                    cell % n_periods,
                    idx % n_firms
                ),
            }
        };
        let actions: Vec<usize> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| missing(i)))
            .collect::<Result<_>>()?;
        let states: Vec<usize> = states.into_iter().map(|s| s.expect("set with its actions")).collect();
        PanelData::new(n_markets, n_periods, n_firms, states, actions, None)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PanelData {
        PanelData::new(2, 3, 2, vec![0, 1, 2, 3, 4, 5], (0..12).map(|i| i % 2).collect(), Some(vec![0, 1])).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("market,period,firm,state_index,action\n"));
        let back = PanelData::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, p.states);
        assert_eq!(back.actions, p.actions);
        assert_eq!(back.types(), None);
    }

    #[test]
    fn parse_errors_name_rows() {
        let text = "market,period,firm,state_index,action\n0,0,0,1,0\n0,1,0,x,1\n";
        match PanelData::read_csv(text.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "market,period,firm,state_index,action\n0,0,0,1,0\n1,1,0,2,1\n";
        assert!(matches!(PanelData::read_csv(ragged.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn select_markets_keeps_rows() {
        let p = sample();
        let q = p.select_markets(&[1, 1, 0]).unwrap();
        assert_eq!(q.n_markets(), 3);
        assert_eq!(q.market_states(0), p.market_states(1));
        assert_eq!(q.types(), Some(&[1, 1, 0][..]));
    }
}
