"""Reference SplitMix64 shuffle-then-take, independent of the C++ code.

Used once to freeze the subsample golden values in tests/test_dataset.cpp.
"""
M = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


class Rng:
    def __init__(self, seed):
        self.state = seed & M

    def next(self):
        self.state = (self.state + GAMMA) & M
        return mix(self.state)

    def below(self, bound):
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def subsample(ids, n, seed):
    order = list(range(len(ids)))
    rng = Rng(seed)
    for i in range(len(order), 1, -1):
        j = rng.below(i)
        order[i - 1], order[j] = order[j], order[i - 1]
    return [ids[k] for k in sorted(order[:n])]


if __name__ == "__main__":
    print(subsample(["a", "b", "c", "d", "e"], 2, 7))
    print(subsample([f"q{i}" for i in range(10)], 4, 42))
    r = Rng(0)
    print([hex(r.next()) for _ in range(3)])
