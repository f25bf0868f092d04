"""Regenerates the frozen instances the agent tests train and evaluate on.

Run from this directory: python3 make_desk.py
Requires the simulator package (dev-time only; the agent itself never
touches instance files).
"""

from pathlib import Path

from dtapsim.model import (ActivityLabel, Calendar, CompletionModel,
                           DtapInstance, Resource, TransitionModel,
                           save_instance, validate_instance)

HERE = Path(__file__).parent


def _labels(*regular):
    labels = [ActivityLabel(0, "start", "start")]
    labels += [ActivityLabel(i + 1, name, "regular")
               for i, name in enumerate(regular)]
    labels.append(ActivityLabel(len(regular) + 1, "end", "end"))
    return tuple(labels)


def desk() -> DtapInstance:
    # two activity kinds, three slow generalists plus one fast specialist
    # each; routing work to the specialists is the behavior worth learning,
    # and uniform choice keeps landing on a generalist
    generalists = tuple(Resource(i, f"gen{i}", 1) for i in range(3))
    pools = []
    completion = {}
    for resource in generalists:
        for label_id in (1, 2):
            pools.append((label_id, resource.id))
            completion[(label_id, resource.id)] = CompletionModel(3.0, 0.4)
    pools += [(1, 3), (2, 4)]
    completion[(1, 3)] = CompletionModel(0.5, 0.1)
    completion[(2, 4)] = CompletionModel(0.5, 0.1)
    return DtapInstance(
        name="desk",
        labels=_labels("alpha", "beta"),
        resources=generalists + (Resource(3, "fast_a", 1),
                                 Resource(4, "fast_b", 1)),
        pools=tuple(sorted(pools)),
        completion=completion,
        transitions=TransitionModel(rows={0: {1: 0.5, 2: 0.5},
                                          1: {3: 1.0}, 2: {3: 1.0}}),
        calendar=Calendar(expected_active=(5,) * 168, period_hours=168),
        arrival_rate=1.0,
        horizon_hours=168.0,
    )


def desk_b() -> DtapInstance:
    # different shape on purpose: one activity kind, two resources
    return DtapInstance(
        name="desk_b",
        labels=_labels("work"),
        resources=(Resource(0, "quick", 1), Resource(1, "steady", 1)),
        pools=((1, 0), (1, 1)),
        completion={(1, 0): CompletionModel(0.3, 0.05),
                    (1, 1): CompletionModel(0.9, 0.15)},
        transitions=TransitionModel(rows={0: {1: 1.0}, 1: {2: 1.0}}),
        calendar=Calendar(expected_active=(2,) * 168, period_hours=168),
        arrival_rate=1.0,
        horizon_hours=168.0,
    )


def main() -> None:
    for build in (desk, desk_b):
        instance = build()
        violations = validate_instance(instance)
        assert not violations, violations
        save_instance(instance, HERE / f"{instance.name}.json")
        print(f"wrote {instance.name}.json")


if __name__ == "__main__":
    main()
