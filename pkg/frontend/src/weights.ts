/** Weight sources for the extractor.
 *
 * There is no pretrained-checkpoint download in this package. By default the
 * network runs with placeholder weights generated deterministically from the
 * model id, which keeps shapes, strides and file plumbing exactly as they
 * would be with real weights and makes outputs reproducible bit for bit.
 * The features are NOT semantically meaningful in that mode; for real use,
 * convert a pretrained checkpoint into the weights file described below and
 * pass it with --weights.
 *
 * Weights file layout: magic "W2V1", little-endian uint32 header length, a
 * JSON header {"tensors": {name: {"shape": [...], "offset": N}}} where the
 * offset is in bytes from the start of the payload, then the concatenated
 * little-endian float32 tensors. Linear weights are stored (in, out);
 * convolution kernels (out, kernel, in); the positional convolution
 * (out, kernel, inPerGroup).
 */

import { closeSync, openSync, readSync, statSync } from 'node:fs';

import { seededFloats } from './rng.js';

export interface WeightSource {
	/** Returns exactly `size` float32 values for the named tensor.
	 * `initScale` is only used by generated weights. */
	tensor(name: string, size: number, initScale: number): Float32Array;
	describe(): string;
}

export class SeededWeights implements WeightSource {
	constructor(private readonly modelId: string) {}

	tensor(name: string, size: number, initScale: number): Float32Array {
		if (name.endsWith('.scale')) return new Float32Array(size).fill(1);
		if (name.endsWith('.shift')) return new Float32Array(size);
		return seededFloats(this.modelId, name, size, initScale);
	}

	describe(): string {
		return 'placeholder seeded weights';
	}
}

interface TensorRecord {
	shape: number[];
	offset: number;
}

export class WeightsFileError extends Error {}

export class FileWeights implements WeightSource {
	private readonly fd: number;
	private readonly payloadStart: number;
	private readonly payloadEnd: number;
	private readonly tensors: Map<string, TensorRecord>;

	constructor(private readonly path: string) {
		let fd: number;
		try {
			fd = openSync(path, 'r');
		} catch (e) {
			throw new WeightsFileError(`cannot open weights file ${path}: ${(e as Error).message}`);
		}
		this.fd = fd;
		const head = Buffer.alloc(8);
		if (readSync(fd, head, 0, 8, 0) !== 8 || head.toString('ascii', 0, 4) !== 'W2V1') {
			closeSync(fd);
			throw new WeightsFileError(`${path}: not a W2V1 weights file`);
		}
		const headerLen = head.readUInt32LE(4);
		const blob = Buffer.alloc(headerLen);
		if (readSync(fd, blob, 0, headerLen, 8) !== headerLen) {
			closeSync(fd);
			throw new WeightsFileError(`${path}: truncated header`);
		}
		let parsed: { tensors?: Record<string, TensorRecord> };
		try {
			parsed = JSON.parse(blob.toString('utf-8'));
		} catch (e) {
			closeSync(fd);
			throw new WeightsFileError(`${path}: header is not valid JSON: ${(e as Error).message}`);
		}
		if (!parsed.tensors) {
			closeSync(fd);
			throw new WeightsFileError(`${path}: header has no tensor table`);
		}
		this.tensors = new Map(Object.entries(parsed.tensors));
		this.payloadStart = 8 + headerLen;
		this.payloadEnd = statSync(path).size;
	}

	tensor(name: string, size: number, _initScale: number): Float32Array {
		const rec = this.tensors.get(name);
		if (!rec) {
			throw new WeightsFileError(`${this.path}: weights file has no tensor named ${name}`);
		}
		const declared = rec.shape.reduce((a, b) => a * b, 1);
		if (declared !== size) {
			throw new WeightsFileError(
				`${this.path}: tensor ${name} has ${declared} values, the model needs ${size}`,
			);
		}
		const bytes = 4 * size;
		const pos = this.payloadStart + rec.offset;
		if (pos + bytes > this.payloadEnd) {
			throw new WeightsFileError(`${this.path}: tensor ${name} runs past end of file`);
		}
		const buf = Buffer.alloc(bytes);
		if (readSync(this.fd, buf, 0, bytes, pos) !== bytes) {
			throw new WeightsFileError(`${this.path}: short read on tensor ${name}`);
		}
		const out = new Float32Array(size);
		for (let i = 0; i < size; i++) {
			out[i] = buf.readFloatLE(4 * i);
		}
		return out;
	}

	describe(): string {
		return `weights from ${this.path}`;
	}

	close(): void {
		closeSync(this.fd);
	}
}
