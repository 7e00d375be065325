import itertools

from hypothesis import HealthCheck, settings

from locksmith.netlist import GateType, Netlist

settings.register_profile("ci", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def truth_eval(n: Netlist, assignment: dict) -> dict:
    """Slow reference evaluator: recursive, memoised, one vector at a time."""
    cache = dict(assignment)
    by_name = {g.name: g for g in n.gates}

    def val(s):
        if s in cache:
            return cache[s]
        g = by_name[s]
        v = [val(f) for f in g.fanin]
        t = g.gtype
        if t is GateType.AND:
            r = int(all(v))
        elif t is GateType.NAND:
            r = int(not all(v))
        elif t is GateType.OR:
            r = int(any(v))
        elif t is GateType.NOR:
            r = int(not any(v))
        elif t is GateType.XOR:
            r = sum(v) % 2
        elif t is GateType.XNOR:
            r = 1 - sum(v) % 2
        elif t is GateType.NOT:
            r = 1 - v[0]
        elif t is GateType.BUF:
            r = v[0]
        else:
            r = int(t is GateType.CONST1)
        cache[s] = r
        return r

    return {o: val(o) for o in n.primary_outputs}


def all_patterns(names):
    for bits in itertools.product((0, 1), repeat=len(names)):
        yield dict(zip(names, bits))
