/**
 * Deterministic PRNG for weight initialization.
 *
 * mulberry32 keeps the extractor reproducible byte-for-byte across runs
 * and machines: the same seed always yields the same network weights.
 */

export type Rng = () => number;

export function mulberry32(seed: number): Rng {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Standard normal draws via Box-Muller on the given uniform stream. */
export function gaussian(rng: Rng): Rng {
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const value = spare;
      spare = null;
      return value;
    }
    let u = 0;
    let v = 0;
    // Avoid log(0).
    do {
      u = rng();
    } while (u === 0);
    v = rng();
    const radius = Math.sqrt(-2.0 * Math.log(u));
    spare = radius * Math.sin(2.0 * Math.PI * v);
    return radius * Math.cos(2.0 * Math.PI * v);
  };
}

/** Float32 weight tensor data: He-style scale sqrt(2/fanIn). */
export function heNormal(count: number, fanIn: number, rng: Rng): Float32Array {
  const draw = gaussian(rng);
  const scale = Math.sqrt(2.0 / fanIn);
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = draw() * scale;
  }
  return out;
}
