//! Terminal teaching: renders the machine state, reads decisions and
//! annotations, and drives either an in-process session or a remote one.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use anyhow::{anyhow, bail, Context, Result};
use mt_client::MtClient;
use mt_core::augment::{Action, FeedbackRecord};
use mt_core::corpus::IntentLabel;
use mt_core::session::{InteractionEvent, MachineStateView, Session, SessionReport, TeachStepResult};
use mt_core::Error;

/// The operations the terminal loop needs from a session.
pub trait Driver {
    fn intents(&self) -> &[IntentLabel];
    /// `None` once the pool is exhausted.
    fn next(&mut self) -> Result<Option<MachineStateView>>;
    fn decide(&mut self, example_id: &str, action: Action) -> Result<()>;
    fn feedback(&mut self, fb: &FeedbackRecord) -> Result<TeachStepResult>;
    fn report(&mut self) -> Result<SessionReport>;
    fn events(&mut self) -> Result<Vec<InteractionEvent>>;
}

pub struct LocalDriver {
    pub session: Session,
    intents: Vec<IntentLabel>,
}

impl LocalDriver {
    pub fn new(session: Session) -> Self {
        let intents = session.model().inventory().labels().to_vec();
        LocalDriver { session, intents }
    }
}

impl Driver for LocalDriver {
    fn intents(&self) -> &[IntentLabel] {
        &self.intents
    }

    fn next(&mut self) -> Result<Option<MachineStateView>> {
        match self.session.next_candidate() {
            Ok(v) => Ok(Some(v)),
            Err(Error::PoolExhausted) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn decide(&mut self, example_id: &str, action: Action) -> Result<()> {
        Ok(self.session.decide(example_id, action)?)
    }

    fn feedback(&mut self, fb: &FeedbackRecord) -> Result<TeachStepResult> {
        Ok(self.session.submit_feedback(fb.clone())?)
    }

    fn report(&mut self) -> Result<SessionReport> {
        Ok(self.session.report())
    }

    fn events(&mut self) -> Result<Vec<InteractionEvent>> {
        Ok(self.session.log().to_vec())
    }
}

pub struct RemoteDriver {
    rt: tokio::runtime::Runtime,
    client: MtClient,
    id: String,
    intents: Vec<IntentLabel>,
}

impl RemoteDriver {
    pub fn create(client: MtClient, spec: &mt_core::artifacts::SessionSpec) -> Result<Self> {
        let rt = tokio::runtime::Runtime::new()?;
        let handle = rt
            .block_on(client.create_session(spec))
            .with_context(|| format!("creating a session at {}", client.base_url()))?;
        Ok(RemoteDriver {
            rt,
            client,
            id: handle.id,
            intents: handle.intents,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl Driver for RemoteDriver {
    fn intents(&self) -> &[IntentLabel] {
        &self.intents
    }

    fn next(&mut self) -> Result<Option<MachineStateView>> {
        match self.rt.block_on(self.client.next_candidate(&self.id)) {
            Ok(v) => Ok(Some(v)),
            Err(e) if e.is_pool_exhausted() => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn decide(&mut self, example_id: &str, action: Action) -> Result<()> {
        self.rt.block_on(self.client.decide(&self.id, example_id, action))?;
        Ok(())
    }

    fn feedback(&mut self, fb: &FeedbackRecord) -> Result<TeachStepResult> {
        Ok(self.rt.block_on(self.client.submit_feedback(&self.id, fb))?)
    }

    fn report(&mut self) -> Result<SessionReport> {
        Ok(self.rt.block_on(self.client.report(&self.id))?)
    }

    fn events(&mut self) -> Result<Vec<InteractionEvent>> {
        Ok(self.rt.block_on(self.client.events(&self.id))?)
    }
}

pub fn render(view: &MachineStateView, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out)?;
    writeln!(out, "example {}: {}", view.example_id, view.text)?;
    writeln!(out, "confusion {:.4}", view.confusion)?;
    for (i, p) in view.top_k.iter().enumerate() {
        writeln!(out, "  {}. {:<24} {:.4}", i + 1, p.intent.name, p.confidence)?;
    }
    writeln!(out, "tokens (position, importance, recommendations):")?;
    for (i, t) in view.tokens.iter().enumerate() {
        let recs: Vec<&str> = view.recommendations[i].iter().take(6).map(|r| r.phrase.as_str()).collect();
        writeln!(out, "  {i:>2} {t:<16} {:.4}  {}", view.importance[i], recs.join(", "))?;
    }
    Ok(())
}

/// Space- or comma-separated token positions below `n`.
pub fn parse_positions(line: &str, n: usize) -> std::result::Result<BTreeSet<usize>, String> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<usize>() {
            Ok(p) if p < n => Ok(p),
            Ok(p) => Err(format!("position {p} is outside the {n}-token sentence")),
            Err(_) => Err(format!("`{s}` is not a position")),
        })
        .collect()
}

/// A number picks from the shown predictions, a name from the inventory,
/// empty input takes the top prediction.
pub fn parse_label(line: &str, view: &MachineStateView, intents: &[IntentLabel]) -> std::result::Result<IntentLabel, String> {
    let s = line.trim();
    if s.is_empty() {
        return view
            .top_k
            .first()
            .map(|p| p.intent.clone())
            .ok_or_else(|| "no prediction to default to".to_string());
    }
    if let Ok(i) = s.parse::<usize>() {
        return view
            .top_k
            .get(i.wrapping_sub(1))
            .map(|p| p.intent.clone())
            .ok_or_else(|| format!("choose 1..={}", view.top_k.len()));
    }
    intents
        .iter()
        .find(|l| l.name.eq_ignore_ascii_case(s))
        .cloned()
        .ok_or_else(|| format!("unknown intent `{s}`"))
}

/// Comma-separated entries; a number picks a shown recommendation, anything
/// else is taken as a phrase.
pub fn parse_replacements(line: &str, view: &MachineStateView, position: usize) -> Vec<String> {
    line.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<usize>() {
            Ok(i) if i >= 1 && i <= view.recommendations[position].len() => {
                view.recommendations[position][i - 1].phrase.clone()
            }
            _ => s.to_string(),
        })
        .collect()
}

struct Prompter<'a> {
    input: &'a mut dyn BufRead,
    out: &'a mut dyn Write,
}

impl Prompter<'_> {
    /// `None` on end of input.
    fn ask(&mut self, prompt: &str) -> Result<Option<String>> {
        write!(self.out, "{prompt}")?;
        self.out.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim().to_string()))
    }

    fn ask_until<T>(
        &mut self,
        prompt: &str,
        mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        loop {
            let Some(line) = self.ask(prompt)? else {
                return Ok(None);
            };
            match parse(&line) {
                Ok(v) => return Ok(Some(v)),
                Err(e) => writeln!(self.out, "  {e}")?,
            }
        }
    }
}

fn annotate(p: &mut Prompter<'_>, view: &MachineStateView, intents: &[IntentLabel]) -> Result<Option<FeedbackRecord>> {
    let n = view.tokens.len();
    let top = view.top_k.first().map_or("-", |t| t.intent.name.as_str());
    let Some(label) = p.ask_until(&format!("label [number, name or Enter for {top}] > "), |l| {
        parse_label(l, view, intents)
    })?
    else {
        return Ok(None);
    };
    let Some(important) = p.ask_until("important positions [Enter for none] > ", |l| parse_positions(l, n))? else {
        return Ok(None);
    };
    let mut validated = BTreeMap::new();
    for &pos in &important {
        let recs: Vec<String> = view.recommendations[pos]
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}={}", i + 1, r.phrase))
            .collect();
        writeln!(p.out, "  `{}`: {}", view.tokens[pos], recs.join("  "))?;
        let Some(line) = p.ask(&format!("replacements for `{}` [numbers or phrases, comma-separated] > ", view.tokens[pos]))?
        else {
            return Ok(None);
        };
        let phrases = parse_replacements(&line, view, pos);
        if !phrases.is_empty() {
            validated.insert(pos, phrases);
        }
    }
    let Some(inconsequential) =
        p.ask_until("inconsequential positions [Enter for none] > ", |l| parse_positions(l, n))?
    else {
        return Ok(None);
    };
    Ok(Some(FeedbackRecord {
        example_id: view.example_id.clone(),
        label,
        important,
        inconsequential,
        validated,
        action: Action::Accept,
        sim_seconds: 0.0,
    }))
}

/// Runs the teaching loop until the pool is exhausted, the teacher quits or
/// the input ends. An accepted example whose feedback was not submitted is
/// left pending.
pub fn run_interactive(driver: &mut dyn Driver, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<SessionReport> {
    let intents = driver.intents().to_vec();
    let mut p = Prompter { input, out };
    'offers: loop {
        let Some(view) = driver.next()? else {
            writeln!(p.out, "the pool is exhausted")?;
            break;
        };
        render(&view, p.out)?;
        let Some(choice) = p.ask("[a]ccept, [s]kip, [q]uit > ")? else {
            break;
        };
        match choice.to_lowercase().as_str() {
            "s" | "skip" => {
                driver.decide(&view.example_id, Action::Skip)?;
                continue;
            }
            "q" | "quit" => break,
            "a" | "accept" | "" => {}
            other => {
                writeln!(p.out, "  unrecognized choice `{other}`")?;
                continue;
            }
        }
        driver.decide(&view.example_id, Action::Accept)?;
        loop {
            let Some(fb) = annotate(&mut p, &view, &intents)? else {
                break 'offers;
            };
            match driver.feedback(&fb) {
                Ok(step) => {
                    writeln!(
                        p.out,
                        "taught {}: {} variations, test error {:.4}, running average {:.4}, {:.0} s",
                        step.example_id, step.variations, step.error, step.point.running_avg, step.point.sim_seconds
                    )?;
                    for w in &step.warnings {
                        writeln!(p.out, "  warning: {w}")?;
                    }
                    break;
                }
                Err(e) => writeln!(p.out, "  rejected: {e}; annotate again")?,
            }
        }
    }
    driver.report()
}

pub fn print_report(report: &SessionReport, out: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| anyhow!(e))?;
    writeln!(out, "{text}")?;
    Ok(())
}

pub fn ensure_fresh_log(path: &std::path::Path) -> Result<()> {
    if path.exists() {
        bail!("event log {} already exists; choose another --log path", path.display());
    }
    Ok(())
}
