/** Deterministic pseudo-random floats for placeholder weight generation.
 *
 * Every tensor is seeded from the model id and its own name, so weights are
 * reproducible across runs and machines without any state on disk, and
 * independent of the order in which tensors are requested.
 */

export function fnv1a(text: string): number {
	let h = 0x811c9dc5;
	for (let i = 0; i < text.length; i++) {
		h ^= text.charCodeAt(i);
		h = Math.imul(h, 0x01000193);
	}
	return h >>> 0;
}

/** splitmix32: tiny state, passes the usual smoke tests, fast enough to
 * stream tens of millions of draws. Not for cryptography. */
export class Rng {
	private state: number;

	constructor(seed: number) {
		this.state = seed >>> 0;
	}

	nextUint32(): number {
		this.state = (this.state + 0x9e3779b9) >>> 0;
		let z = this.state;
		z ^= z >>> 16;
		z = Math.imul(z, 0x21f0aaad);
		z ^= z >>> 15;
		z = Math.imul(z, 0x735a2d97);
		z ^= z >>> 15;
		return z >>> 0;
	}

	/** Uniform in [-1, 1). */
	nextSigned(): number {
		return this.nextUint32() / 2147483648 - 1;
	}
}

/** Uniform(-scale, scale) array seeded by (modelId, name). */
export function seededFloats(
	modelId: string,
	name: string,
	size: number,
	scale: number,
): Float32Array {
	const rng = new Rng(fnv1a(`${modelId}/${name}`));
	const out = new Float32Array(size);
	for (let i = 0; i < size; i++) {
		out[i] = rng.nextSigned() * scale;
	}
	return out;
}
