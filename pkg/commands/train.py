"""train and eval subcommands."""
import json
import logging
import time
from pathlib import Path

from algos.ppo import PpoAgent, ppo_train
from algos.sac import SacAgent, sac_train
from core.envs import action_dim, make_env, observation_dim
from core.errors import NonFiniteError
from extensions import output_root
from models import load_config, serialize_config
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.helpers import perf_timer, seed_streams
from utils.metrics import evaluate_policy
from utils.runlog import RunLog

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGED = 3


def make_config_env(config):
    return make_env(config.env.id, time_feature=config.env.time_feature, history=config.env.history,
                    max_steps=config.env.max_steps)


def build_agent(config, env, rng):
    if config.algo.name == "sac":
        return SacAgent.from_config(config, observation_dim(env), action_dim(env), rng)
    return PpoAgent.from_config(config, observation_dim(env), action_dim(env), rng)


def train(config, streams, callback=None):
    """Dispatch to the configured algorithm. Returns a TrainingResult."""
    if config.algo.name == "sac":
        return sac_train(config, make_config_env(config), streams, callback)
    envs = [make_config_env(config) for _ in range(config.algo.n_workers)]
    return ppo_train(config, envs, streams, callback)


class EvalSchedule:
    """Evaluates at the first episode end at or after each multiple of eval.interval."""

    def __init__(self, config, streams, log: RunLog):
        self.config = config
        self.log = log
        self.env = make_config_env(config)
        # drawn once: every evaluation replays the same start states
        self.seed = int(streams.eval.integers(2 ** 31 - 1))
        self.next_eval = config.eval.interval
        self.started = time.perf_counter()
        self.last_timestep = 0
        self.episodes = 0

    def _clock(self, row):
        if self.config.run.record_wall_clock:
            row.wall_clock_seconds = round(time.perf_counter() - self.started, 6)

    def evaluate(self, agent, row):
        report = evaluate_policy(agent, self.env, self.config.eval.episodes, self.seed, timestep=row.timestep)
        row.attach_eval(report)
        return report

    def __call__(self, record, agent):
        row = self.log.row_at(record.timestep, record.episode)
        row.episode_return = record.episode_return
        row.episode_continuity_cost = record.continuity_cost
        self._clock(row)
        self.last_timestep, self.episodes = record.timestep, record.episode
        if record.timestep >= self.next_eval:
            self.evaluate(agent, row)
            interval = self.config.eval.interval
            self.next_eval = (record.timestep // interval + 1) * interval

    def finish(self, agent, budget):
        """Final evaluation row at the budget."""
        row = self.log.row_at(budget, self.episodes)
        self._clock(row)
        if not row.has_eval:
            self.evaluate(agent, row)

    def diverged(self, timestep):
        row = self.log.row_at(max(timestep or 0, self.last_timestep), self.episodes)
        row.mark_diverged()


def run_seed(config, seed, run_dir) -> int:
    """One training run: progress.csv, checkpoint.json and config.yaml in ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(serialize_config(config), encoding="utf-8")
    streams = seed_streams(seed)
    log = RunLog()
    schedule = EvalSchedule(config, streams, log)

    with perf_timer(f"train {config.run_name} seed {seed}"):
        try:
            result = train(config, streams, schedule)
            agent = result.agent
            if config.run.total_steps > 0:
                schedule.finish(agent, config.run.total_steps)
        except NonFiniteError as e:
            logger.error("seed %d diverged at timestep %s: %s", seed, e.timestep, e)
            schedule.diverged(e.timestep)
            log.write(run_dir / "progress.csv")
            return EXIT_DIVERGED

    log.write(run_dir / "progress.csv")
    save_checkpoint(
        run_dir / "checkpoint.json",
        agent.state_dict(),
        streams.bit_generator_states(),
        {"seed": seed, "algo": config.algo.name, "noise": config.label, "timesteps": result.total_steps},
    )
    if log.last is not None and log.last.has_eval:
        logger.info("seed %d finished: final eval return %.3f", seed, log.last.eval_return)
    return EXIT_OK


def run_directory(config, seed, root=None):
    base = Path(root or output_root(config.run.output_dir))
    return base / config.run_name / f"seed_{seed}"


def cmd_train(config, root=None) -> int:
    """One run per seed; the exit status is the worst per-seed status."""
    statuses = [run_seed(config, seed, run_directory(config, seed, root)) for seed in config.run.seeds]
    return max(statuses) if statuses else EXIT_OK


def cmd_eval(checkpoint_path, config, episodes=None, seed=None) -> int:
    """Restore a checkpoint and print its deterministic EvalReport as JSON.

    Without ``seed`` the evaluation start states continue the checkpointed run's own eval stream.
    """
    state, rng_states, metadata = load_checkpoint(checkpoint_path)
    if seed is None:
        streams = seed_streams(int(metadata.get("seed", 0)))
        streams.restore(rng_states)
    else:
        streams = seed_streams(seed)
    env = make_config_env(config)
    agent = build_agent(config, env, streams.policy_init)
    agent.load_state_dict(state)
    report = evaluate_policy(agent, env, episodes or config.eval.episodes, int(streams.eval.integers(2 ** 31 - 1)),
                             timestep=int(metadata.get("timesteps", 0)))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _train_handler(args):
    return cmd_train(load_config(args.config), args.output)


def _eval_handler(args):
    return cmd_eval(args.checkpoint, load_config(args.config), args.episodes, args.seed)


def register(subparsers):
    train_parser = subparsers.add_parser("train", help="train one agent per configured seed")
    train_parser.add_argument("config", help="experiment YAML")
    train_parser.add_argument("-o", "--output", default=None, help="output root (default: GSDE_OUTPUT_ROOT or run.output_dir)")
    train_parser.set_defaults(func=_train_handler)

    eval_parser = subparsers.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    eval_parser.add_argument("checkpoint", help="checkpoint.json written by train")
    eval_parser.add_argument("config", help="experiment YAML the checkpoint was trained with")
    eval_parser.add_argument("--episodes", type=int, default=None)
    eval_parser.add_argument("--seed", type=int, default=None,
                             help="fresh seed for the evaluation episodes (default: continue the run's stream)")
    eval_parser.set_defaults(func=_eval_handler)
