//! Command-line flags generated from a config type's `key=value` keys, so the
//! flag set always mirrors the config file format.

use std::marker::PhantomData;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use eventdehaze::pipeline::config::Pairs;
use eventdehaze::pipeline::{DatasetConfig, TrainConfig};

/// A config type whose keys become `--key-name` flags. `seed` is excluded;
/// it is the global `--seed` flag.
pub trait KeySource {
    const HEADING: &'static str;
    fn default_pairs() -> Pairs;
}

impl KeySource for TrainConfig {
    const HEADING: &'static str = "Training config (mirrors config-file keys)";
    fn default_pairs() -> Pairs {
        TrainConfig::default().to_pairs()
    }
}

impl KeySource for DatasetConfig {
    const HEADING: &'static str = "Dataset config (mirrors config-file keys)";
    fn default_pairs() -> Pairs {
        DatasetConfig::default().to_pairs()
    }
}

/// Overrides given on the command line, in key order.
#[derive(Debug, Clone)]
pub struct KvFlags<S> {
    pub pairs: Pairs,
    _source: PhantomData<S>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn keys<S: KeySource>() -> impl Iterator<Item = (String, String)> {
    S::default_pairs().into_iter().filter(|(k, _)| k != "seed")
}

impl<S: KeySource> FromArgMatches for KvFlags<S> {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let pairs = keys::<S>()
            .filter_map(|(k, _)| m.get_one::<String>(&k).map(|v| (k.clone(), v.clone())))
            .collect();
        Ok(Self {
            pairs,
            _source: PhantomData,
        })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl<S: KeySource> Args for KvFlags<S> {
    fn augment_args(mut cmd: Command) -> Command {
        cmd = cmd.next_help_heading(S::HEADING);
        for (k, default) in keys::<S>() {
            cmd = cmd.arg(
                Arg::new(k.clone())
                    .long(flag_name(&k))
                    .value_name("VALUE")
                    .help(format!("[default: {default}]")),
            );
        }
        cmd.next_help_heading(None::<&str>)
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
