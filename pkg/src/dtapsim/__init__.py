"""Discrete-event simulator and benchmark harness for dynamic task
assignment with stochastic activity sequences."""

from .bench import (AgreementResult, ReplicationResult, WelchResult,
                    action_agreement, cross_eval, run_replications,
                    stability_probe, welch_t_test)
from .engine import (Case, DecisionPoint, EpisodeEnd, InFlightAssignment,
                     SimState, apply_assignment, fire_complete_activity,
                     init_episode, sample_completion, sample_interarrival,
                     schedule_resources, step_until_decision)
from .mining import EventLog, assemble_instance, mining_report, parse_event_log
from .model import (ActivityLabel, Calendar, CompletionModel, DtapInstance,
                    Resource, TransitionModel, Violation, hour_of_week,
                    load_instance, save_instance, validate_instance)
from .observation import (AssignmentGraph, build_observation, decode_action,
                          deserialize_observation, serialize_observation,
                          standardize_features)
from .policies import (PolicyDecision, fifo_policy, make_policy, random_policy,
                       run_episode, spt_policy)
from .protocol import (EngineConfig, RemotePolicyClient, SimulatorServer,
                       run_remote_episode, start_server)
from .rewards import (EpisodeSummary, RewardLedger, audit_episode_sum,
                      audit_passed, finalize_episode, record_transition,
                      reward_for_decision)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
