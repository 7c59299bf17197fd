"""Reference simulator written independently of the package engine.

Plain lists and linear scans instead of heaps, and no shared code with
``teleop_sim.engine``. Tours are given as dicts::

    {"id": "A", "start": 0.0, "trips": [(dwell, travel, distance), ...]}

``rest`` is ``None`` or ``(mode, max_drive, long_rest, short_rest)``.
"""

PRIORITY = {"TripComplete": 0, "RestComplete": 1, "TakeoverComplete": 2, "VehicleReady": 3}


def simulate(tours, n_ops, takeover, rest=None, start=0.0):
    pending = []  # [time, priority, seq, kind, vehicle, op]
    counter = [0]

    def schedule(t, kind, v=None, o=None):
        pending.append([t, PRIORITY[kind], counter[0], kind, v, o])
        counter[0] += 1

    veh = [{"trip": 0, "req": None, "assign": None, "drive": None} for _ in tours]
    ops = [{"state": "Idle", "idle_since": 0.0, "driven": 0.0, "credit": 0.0, "since": 0.0,
            "occupied": []} for _ in range(n_ops)]
    queue = []
    log = []
    records = []
    done = {}

    for o in ops:
        o["idle_since"] = start
        o["since"] = start
    for i, t in enumerate(tours):
        schedule(t["start"] + t["trips"][0][0], "VehicleReady", i)

    def free_op():
        best = None
        for j, o in enumerate(ops):
            if o["state"] != "Idle":
                continue
            if rest is not None and o["driven"] >= rest[1]:
                continue
            if best is None or (o["idle_since"], j) < (ops[best]["idle_since"], best):
                best = j
        return best

    def occupy(j, state, now):
        o = ops[j]
        if o["state"] != "Idle":
            o["occupied"].append((o["since"], now, o["state"]))
        o["state"] = state
        o["since"] = now

    def begin(i, j, now):
        veh[i]["assign"] = now
        occupy(j, "Takeover", now)
        schedule(now + takeover, "TakeoverComplete", i, j)

    while pending:
        k = min(range(len(pending)), key=lambda n: tuple(pending[n][:3]))
        now, _, _, kind, i, j = pending.pop(k)
        name = tours[i]["id"] if i is not None else ""
        if kind == "VehicleReady":
            veh[i]["req"] = now
            j = free_op() if not queue else None
            if j is None:
                queue.append(i)
                log.append((now, kind, name, -1))
            else:
                begin(i, j, now)
                log.append((now, kind, name, j))
        elif kind == "TakeoverComplete":
            veh[i]["drive"] = now
            occupy(j, "Busy", now)
            travel = tours[i]["trips"][veh[i]["trip"]][1]
            schedule(now + travel, "TripComplete", i, j)
            log.append((now, kind, name, j))
        elif kind == "TripComplete":
            v = veh[i]
            _, travel, dist = tours[i]["trips"][v["trip"]]
            records.append(dict(vehicle=name, trip=v["trip"], op=j, req=v["req"], assign=v["assign"],
                                drive_start=v["drive"], drive_end=now, travel=travel, distance=dist))
            v["trip"] += 1
            if v["trip"] < len(tours[i]["trips"]):
                schedule(now + tours[i]["trips"][v["trip"]][0], "VehicleReady", i)
            else:
                done[name] = now
            o = ops[j]
            o["driven"] += travel
            pause = 0.0
            if rest is not None:
                mode, cap, long_rest, short_rest = rest
                if mode == "monolithic" and o["driven"] >= cap:
                    pause = long_rest
                    o["driven"] = 0.0
                elif mode == "split":
                    if o["driven"] >= cap:
                        pause = max(short_rest, long_rest - o["credit"])
                        o["driven"] = 0.0
                        o["credit"] = 0.0
                    else:
                        pause = short_rest
                        o["credit"] += short_rest
            if pause > 0:
                occupy(j, "Resting", now)
                schedule(now + pause, "RestComplete", None, j)
            else:
                occupy(j, "Idle", now)
                o["idle_since"] = now
            log.append((now, kind, name, j))
        else:
            occupy(j, "Idle", now)
            ops[j]["idle_since"] = now
            log.append((now, kind, "", j))

        # match only once nothing else at this instant can free an operator
        holding = any(p[0] == now and p[1] <= 1 for p in pending)
        while queue and not holding:
            j = free_op()
            if j is None:
                break
            i = queue.pop(0)
            begin(i, j, now)
            log.append((now, "Assign", tours[i]["id"], j))

    return {"log": log, "records": records, "done": done, "ops": ops, "start": start}


def kpis(run, base, tours):
    """Indicators computed straight from the definitions."""
    K = len(tours)
    start = run["start"]
    ms = max(run["done"].values()) - start
    ms_b = max(base["done"].values()) - start
    waits = [r["assign"] - r["req"] for r in run["records"]]
    total = sum(waits)
    nq = sum(1 for w in waits if w > 0)
    util_k = [sum(tr[1] for tr in t["trips"]) / ms for t in tours]
    util_to = []
    for o in run["ops"]:
        occ = 0.0
        for a, b, _ in o["occupied"]:
            occ += max(0.0, min(b, start + ms) - max(a, start))
        util_to.append(occ / ms)
    cut = start + ms_b
    tcr = sum(1 for t in run["done"].values() if t <= cut + 1e-9) / K
    dist = sum(tr[2] for t in tours for tr in t["trips"])
    dcr = sum(r["distance"] for r in run["records"] if r["drive_end"] <= cut + 1e-9) / dist
    return {
        "avg_wait_per_vehicle": total / K,
        "avg_wait_per_queue_entry": total / nq if nq else 0.0,
        "queue_entry_count": nq,
        "avg_vehicle_utilization": sum(util_k) / K,
        "avg_teleoperator_utilization": sum(util_to) / len(util_to),
        "makespan_sum": sum(r["travel"] + (r["drive_start"] - r["assign"]) + (r["assign"] - r["req"])
                            for r in run["records"]),
        "completion_makespan": ms,
        "baseline_makespan": ms_b,
        "tour_completion_rate": tcr,
        "distance_completion_rate": dcr,
        "delay": (ms - ms_b) / ms_b,
        "max_wait": max(waits),
    }
