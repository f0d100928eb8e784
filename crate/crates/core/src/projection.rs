//! Annual business-case arithmetic for a gated deployment.
//!
//! Five line items (two fixed, three driven by conversion statistics) are
//! summed and the deployment cost subtracted. Everything is decimal, so the
//! exact figures are exact to the cent. A model may also carry a rounding
//! schedule: each variable line item is then rounded half-up to each listed
//! step in turn before it is reported and summed, which is how figures
//! quoted in thousands and then in tenths of a million come about.

use std::collections::BTreeMap;
use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::Serialize;
use thiserror::Error;

use crate::error::{ParseError, ParseErrorKind};
use crate::graph::strip_comment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Churn {
    pub at_risk_population: Decimal,
    pub nmf_accuracy: Decimal,
    pub contact_rate: Decimal,
    pub retention_conversion: Decimal,
    pub ltv: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Upsell {
    pub additional_conversions: Decimal,
    pub value_per_conversion: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expansion {
    pub sessions: Decimal,
    pub conversion: Decimal,
    pub value: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixedLines {
    pub ops_reduction: Decimal,
    pub compliance_avoidance: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionModel {
    pub churn: Churn,
    pub upsell: Upsell,
    pub expansion: Expansion,
    pub fixed_lines: FixedLines,
    pub deployment_cost: Decimal,
    /// Rounding steps applied in order to each variable line item; empty
    /// means figures are reported exactly.
    pub line_item_rounding: Vec<Decimal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Count,
    Fraction,
    Currency,
}

const KEYS: [(&str, Kind); 13] = [
    ("churn.at_risk_population", Kind::Count),
    ("churn.nmf_accuracy", Kind::Fraction),
    ("churn.contact_rate", Kind::Fraction),
    ("churn.retention_conversion", Kind::Fraction),
    ("churn.ltv", Kind::Currency),
    ("upsell.additional_conversions", Kind::Count),
    ("upsell.value_per_conversion", Kind::Currency),
    ("expansion.sessions", Kind::Count),
    ("expansion.conversion", Kind::Fraction),
    ("expansion.value", Kind::Currency),
    ("fixed_lines.ops_reduction", Kind::Currency),
    ("fixed_lines.compliance_avoidance", Kind::Currency),
    ("deployment_cost", Kind::Currency),
];

const ROUNDING_KEY: &str = "line_item_rounding";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProjectionError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("missing parameter `{0}`")]
    Missing(&'static str),
    #[error("`{key}` = {value}: {expected}")]
    OutOfRange {
        key: String,
        value: Decimal,
        expected: &'static str,
    },
}

fn check(key: &str, kind: Kind, value: Decimal) -> Result<(), ProjectionError> {
    let expected = match kind {
        Kind::Count if value.is_sign_negative() || !value.fract().is_zero() => {
            "expected a non-negative whole number"
        }
        Kind::Fraction if value.is_sign_negative() || value > Decimal::ONE => {
            "expected a fraction in [0, 1]"
        }
        Kind::Currency if value.is_sign_negative() => "expected a non-negative amount",
        _ => return Ok(()),
    };
    Err(ProjectionError::OutOfRange {
        key: key.to_string(),
        value,
        expected,
    })
}

impl ProjectionModel {
    /// Rejects out-of-range parameters.
    pub fn validate(&self) -> Result<(), ProjectionError> {
        for (key, kind) in KEYS {
            check(key, kind, self.get(key))?;
        }
        for step in &self.line_item_rounding {
            if *step <= Decimal::ZERO {
                return Err(ProjectionError::OutOfRange {
                    key: ROUNDING_KEY.into(),
                    value: *step,
                    expected: "rounding steps must be positive",
                });
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Decimal {
        match key {
            "churn.at_risk_population" => self.churn.at_risk_population,
            "churn.nmf_accuracy" => self.churn.nmf_accuracy,
            "churn.contact_rate" => self.churn.contact_rate,
            "churn.retention_conversion" => self.churn.retention_conversion,
            "churn.ltv" => self.churn.ltv,
            "upsell.additional_conversions" => self.upsell.additional_conversions,
            "upsell.value_per_conversion" => self.upsell.value_per_conversion,
            "expansion.sessions" => self.expansion.sessions,
            "expansion.conversion" => self.expansion.conversion,
            "expansion.value" => self.expansion.value,
            "fixed_lines.ops_reduction" => self.fixed_lines.ops_reduction,
            "fixed_lines.compliance_avoidance" => self.fixed_lines.compliance_avoidance,
            "deployment_cost" => self.deployment_cost,
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Parses `key = value` lines. Every parameter must appear exactly once;
    /// `line_item_rounding` is optional and takes a comma-separated list.
    pub fn parse(text: &str) -> Result<Self, ProjectionError> {
        let mut values: BTreeMap<&'static str, Decimal> = BTreeMap::new();
        let mut rounding = Vec::new();
        let mut seen_rounding = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw);
            if line.trim().is_empty() {
                continue;
            }
            let indent = line.len() - line.trim_start().len() + 1;
            let Some(eq) = line.find('=') else {
                return Err(ParseError::new(
                    line_no,
                    indent,
                    ParseErrorKind::Syntax("expected `key = value`".into()),
                )
                .into());
            };
            let key = line[..eq].trim();
            let rhs = &line[eq + 1..];
            let value_col = eq + 2 + (rhs.len() - rhs.trim_start().len());
            let rhs = rhs.trim();
            let number = |s: &str, col: usize| {
                Decimal::from_str(s).map_err(|_| {
                    ParseError::new(
                        line_no,
                        col,
                        ParseErrorKind::InvalidValue(format!("`{s}` is not a decimal")),
                    )
                })
            };
            if key == ROUNDING_KEY {
                if seen_rounding {
                    return Err(ParseError::new(
                        line_no,
                        indent,
                        ParseErrorKind::Syntax(format!("duplicate key `{key}`")),
                    )
                    .into());
                }
                seen_rounding = true;
                for part in rhs.split(',') {
                    rounding.push(number(part.trim(), value_col)?);
                }
                continue;
            }
            let Some(&(name, kind)) = KEYS.iter().find(|(k, _)| *k == key) else {
                return Err(ParseError::new(
                    line_no,
                    indent,
                    ParseErrorKind::Syntax(format!("unknown key `{key}`")),
                )
                .into());
            };
            if values.contains_key(name) {
                return Err(ParseError::new(
                    line_no,
                    indent,
                    ParseErrorKind::Syntax(format!("duplicate key `{key}`")),
                )
                .into());
            }
            let v = number(rhs, value_col)?;
            check(name, kind, v)?;
            values.insert(name, v);
        }
        let take = |k: &'static str| values.get(k).copied().ok_or(ProjectionError::Missing(k));
        let model = ProjectionModel {
            churn: Churn {
                at_risk_population: take("churn.at_risk_population")?,
                nmf_accuracy: take("churn.nmf_accuracy")?,
                contact_rate: take("churn.contact_rate")?,
                retention_conversion: take("churn.retention_conversion")?,
                ltv: take("churn.ltv")?,
            },
            upsell: Upsell {
                additional_conversions: take("upsell.additional_conversions")?,
                value_per_conversion: take("upsell.value_per_conversion")?,
            },
            expansion: Expansion {
                sessions: take("expansion.sessions")?,
                conversion: take("expansion.conversion")?,
                value: take("expansion.value")?,
            },
            fixed_lines: FixedLines {
                ops_reduction: take("fixed_lines.ops_reduction")?,
                compliance_avoidance: take("fixed_lines.compliance_avoidance")?,
            },
            deployment_cost: take("deployment_cost")?,
            line_item_rounding: rounding,
        };
        model.validate()?;
        Ok(model)
    }

    /// Customers retained by proactive outreach.
    pub fn retained_customers(&self) -> Decimal {
        let c = &self.churn;
        c.at_risk_population * c.nmf_accuracy * c.contact_rate * c.retention_conversion
    }

    fn round(&self, x: Decimal) -> Decimal {
        self.line_item_rounding.iter().fold(x, |acc, step| {
            (acc / step).round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero) * step
        })
    }

    pub fn evaluate(&self) -> Result<Projection, ProjectionError> {
        self.validate()?;
        let fixed = |key, label, v: Decimal| LineItem {
            key,
            label,
            exact: v,
            reported: v,
        };
        let variable = |key, label, v: Decimal| LineItem {
            key,
            label,
            exact: v,
            reported: self.round(v),
        };
        let u = &self.upsell;
        let e = &self.expansion;
        let items = vec![
            fixed(
                "ops_reduction",
                "Operational cost reduction",
                self.fixed_lines.ops_reduction,
            ),
            fixed(
                "compliance_avoidance",
                "Compliance exposure avoided",
                self.fixed_lines.compliance_avoidance,
            ),
            variable(
                "upsell",
                "Upsell revenue",
                u.additional_conversions * u.value_per_conversion,
            ),
            variable(
                "churn",
                "Churn reduction",
                self.retained_customers() * self.churn.ltv,
            ),
            variable(
                "expansion",
                "Service expansion",
                e.sessions * e.conversion * e.value,
            ),
        ];
        let total: Decimal = items.iter().map(|i| i.reported).sum();
        let exact_total: Decimal = items.iter().map(|i| i.exact).sum();
        Ok(Projection {
            retained_customers: self.retained_customers(),
            total,
            net_annual_value: total - self.deployment_cost,
            exact_total,
            exact_net_annual_value: exact_total - self.deployment_cost,
            deployment_cost: self.deployment_cost,
            items,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineItem {
    pub key: &'static str,
    pub label: &'static str,
    pub exact: Decimal,
    pub reported: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Projection {
    pub items: Vec<LineItem>,
    pub retained_customers: Decimal,
    pub total: Decimal,
    pub deployment_cost: Decimal,
    pub net_annual_value: Decimal,
    pub exact_total: Decimal,
    pub exact_net_annual_value: Decimal,
}

impl Projection {
    pub fn item(&self, key: &str) -> Option<&LineItem> {
        self.items.iter().find(|i| i.key == key)
    }

    pub fn to_text(&self) -> String {
        let width = self
            .items
            .iter()
            .map(|i| i.label.len())
            .max()
            .unwrap_or(0)
            .max(21);
        let mut out = String::new();
        for i in &self.items {
            out.push_str(&format!(
                "{:<width$}  {:>16}",
                i.label,
                format_money(i.reported)
            ));
            if i.exact != i.reported {
                out.push_str(&format!("  (exact {})", format_money(i.exact)));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{:<width$}  {:>16}\n",
            "Total annual value",
            format_money(self.total)
        ));
        out.push_str(&format!(
            "{:<width$}  {:>16}\n",
            "Deployment cost",
            format_money(self.deployment_cost)
        ));
        out.push_str(&format!("NAV = {}\n", format_money(self.net_annual_value)));
        if self.exact_net_annual_value != self.net_annual_value {
            out.push_str(&format!(
                "exact NAV = {}\n",
                format_money(self.exact_net_annual_value)
            ));
        }
        out
    }
}

/// `$1,234,567.89`, with a leading minus for negative amounts.
pub fn format_money(amount: Decimal) -> String {
    let cents = amount.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero);
    let s = format!("{:.2}", cents.abs());
    let (whole, frac) = s.split_once('.').unwrap_or((&s, "00"));
    let mut grouped = String::new();
    for (i, ch) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    let sign = if cents.is_sign_negative() && !cents.is_zero() {
        "-"
    } else {
        ""
    };
    format!("{sign}${grouped}.{frac}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{CONSERVATIVE_PARAMS, MODERATE_PARAMS};
    use rust_decimal::prelude::FromPrimitive;

    fn d(x: i64) -> Decimal {
        Decimal::from_i64(x).unwrap()
    }

    #[test]
    fn churn_mechanism() {
        let m = ProjectionModel::parse(CONSERVATIVE_PARAMS).unwrap();
        assert_eq!(m.retained_customers(), d(25_500));
        let p = m.evaluate().unwrap();
        assert_eq!(p.item("churn").unwrap().exact, d(12_240_000));
    }

    #[test]
    fn conservative_column() {
        let p = ProjectionModel::parse(CONSERVATIVE_PARAMS)
            .unwrap()
            .evaluate()
            .unwrap();
        let reported: Vec<Decimal> = p.items.iter().map(|i| i.reported).collect();
        assert_eq!(
            reported,
            [
                d(3_810_000),
                d(500_000),
                d(400_000),
                d(12_240_000),
                d(5_250_000)
            ]
        );
        assert_eq!(p.total, d(22_200_000));
        assert_eq!(format_money(p.net_annual_value), "$20,700,000.00");
        assert_eq!(p.item("upsell").unwrap().exact, d(403_200));
        assert_eq!(p.exact_net_annual_value, d(20_703_200));
    }

    #[test]
    fn moderate_column() {
        let p = ProjectionModel::parse(MODERATE_PARAMS)
            .unwrap()
            .evaluate()
            .unwrap();
        assert_eq!(p.item("upsell").unwrap().exact, d(604_800));
        assert_eq!(p.item("upsell").unwrap().reported, d(610_000));
        assert_eq!(p.item("expansion").unwrap().reported, d(7_500_000));
        assert_eq!(p.total, d(29_970_000));
        assert_eq!(p.net_annual_value, d(26_970_000));
    }

    #[test]
    fn zero_fractions_leave_fixed_lines() {
        let mut m = ProjectionModel::parse(CONSERVATIVE_PARAMS).unwrap();
        m.churn.nmf_accuracy = Decimal::ZERO;
        m.expansion.conversion = Decimal::ZERO;
        m.upsell.additional_conversions = Decimal::ZERO;
        let p = m.evaluate().unwrap();
        assert_eq!(p.net_annual_value, d(3_810_000 + 500_000 - 1_500_000));
    }

    #[test]
    fn parse_errors() {
        let no_ltv = CONSERVATIVE_PARAMS.replace("churn.ltv = 480", "");
        assert_eq!(
            ProjectionModel::parse(&no_ltv),
            Err(ProjectionError::Missing("churn.ltv"))
        );
        let bad = CONSERVATIVE_PARAMS.replace("contact_rate = 0.40", "contact_rate = 1.40");
        assert!(matches!(
            ProjectionModel::parse(&bad),
            Err(ProjectionError::OutOfRange { .. })
        ));
        let bad = CONSERVATIVE_PARAMS.replace("= 3360", "= 3360.5");
        assert!(matches!(
            ProjectionModel::parse(&bad),
            Err(ProjectionError::OutOfRange { .. })
        ));
        let bad = CONSERVATIVE_PARAMS.replace("churn.ltv = 480", "churn.ltv = -1");
        assert!(matches!(
            ProjectionModel::parse(&bad),
            Err(ProjectionError::OutOfRange { .. })
        ));
        match ProjectionModel::parse("churn.ltv = abc\n") {
            Err(ProjectionError::Parse(e)) => {
                assert_eq!((e.location.line, e.location.column), (1, 13))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ProjectionModel::parse("bogus = 1\n"),
            Err(ProjectionError::Parse(_))
        ));
        assert!(matches!(
            ProjectionModel::parse("no equals\n"),
            Err(ProjectionError::Parse(_))
        ));
        let dup = format!("{CONSERVATIVE_PARAMS}\ndeployment_cost = 1\n");
        assert!(matches!(
            ProjectionModel::parse(&dup),
            Err(ProjectionError::Parse(_))
        ));
    }

    #[test]
    fn money() {
        assert_eq!(format_money(d(0)), "$0.00");
        assert_eq!(format_money(d(999)), "$999.00");
        assert_eq!(format_money(d(1000)), "$1,000.00");
        assert_eq!(
            format_money(Decimal::from_str("-1234567.891").unwrap()),
            "-$1,234,567.89"
        );
    }
}
