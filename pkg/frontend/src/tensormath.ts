/** Dense float32 kernels for the extractor's forward pass. Everything is
 * row-major and accumulates in float64 so results do not depend on how the
 * loops are blocked. */

export function matmul(
	a: Float32Array, // (m, k)
	b: Float32Array, // (k, n)
	m: number,
	k: number,
	n: number,
): Float32Array {
	const c = new Float32Array(m * n);
	const acc = new Float64Array(n);
	for (let i = 0; i < m; i++) {
		acc.fill(0);
		const ai = i * k;
		for (let p = 0; p < k; p++) {
			const av = a[ai + p];
			if (av === 0) continue;
			const bp = p * n;
			for (let j = 0; j < n; j++) {
				acc[j] += av * b[bp + j];
			}
		}
		const ci = i * n;
		for (let j = 0; j < n; j++) {
			c[ci + j] = acc[j];
		}
	}
	return c;
}

/** C = A Bᵀ, both operands row-major: C[i,j] = dot(A[i,:], B[j,:]). */
export function matmulBT(
	a: Float32Array, // (m, k)
	b: Float32Array, // (n, k)
	m: number,
	k: number,
	n: number,
): Float32Array {
	const c = new Float32Array(m * n);
	for (let i = 0; i < m; i++) {
		const ai = i * k;
		for (let j = 0; j < n; j++) {
			const bj = j * k;
			let acc = 0;
			for (let p = 0; p < k; p++) {
				acc += a[ai + p] * b[bj + p];
			}
			c[i * n + j] = acc;
		}
	}
	return c;
}

export function addBiasInPlace(x: Float32Array, bias: Float32Array, rows: number): void {
	const n = bias.length;
	for (let i = 0; i < rows; i++) {
		const off = i * n;
		for (let j = 0; j < n; j++) {
			x[off + j] += bias[j];
		}
	}
}

export function addInPlace(x: Float32Array, y: Float32Array): void {
	for (let i = 0; i < x.length; i++) {
		x[i] += y[i];
	}
}

/** Gaussian error linear unit, tanh form. */
export function geluInPlace(x: Float32Array): void {
	const c = Math.sqrt(2 / Math.PI);
	for (let i = 0; i < x.length; i++) {
		const v = x[i];
		x[i] = 0.5 * v * (1 + Math.tanh(c * (v + 0.044715 * v * v * v)));
	}
}

/** Normalize each row of (rows, n) to zero mean, unit variance, then apply
 * the learned affine. */
export function layerNormRows(
	x: Float32Array,
	rows: number,
	n: number,
	scale: Float32Array,
	shift: Float32Array,
	eps = 1e-5,
): Float32Array {
	const out = new Float32Array(x.length);
	for (let i = 0; i < rows; i++) {
		const off = i * n;
		let mean = 0;
		for (let j = 0; j < n; j++) mean += x[off + j];
		mean /= n;
		let varsum = 0;
		for (let j = 0; j < n; j++) {
			const d = x[off + j] - mean;
			varsum += d * d;
		}
		const inv = 1 / Math.sqrt(varsum / n + eps);
		for (let j = 0; j < n; j++) {
			out[off + j] = (x[off + j] - mean) * inv * scale[j] + shift[j];
		}
	}
	return out;
}

/** Normalize each column of time-major (rows, n) over the rows. Used for
 * the first conv layer where every channel is its own normalization group. */
export function normalizeColumns(
	x: Float32Array,
	rows: number,
	n: number,
	scale: Float32Array,
	shift: Float32Array,
	eps = 1e-5,
): void {
	for (let j = 0; j < n; j++) {
		let mean = 0;
		for (let i = 0; i < rows; i++) mean += x[i * n + j];
		mean /= rows;
		let varsum = 0;
		for (let i = 0; i < rows; i++) {
			const d = x[i * n + j] - mean;
			varsum += d * d;
		}
		const inv = 1 / Math.sqrt(varsum / rows + eps);
		for (let i = 0; i < rows; i++) {
			x[i * n + j] = (x[i * n + j] - mean) * inv * scale[j] + shift[j];
		}
	}
}

export function softmaxRowsInPlace(x: Float32Array, rows: number, n: number): void {
	for (let i = 0; i < rows; i++) {
		const off = i * n;
		let max = -Infinity;
		for (let j = 0; j < n; j++) {
			if (x[off + j] > max) max = x[off + j];
		}
		let sum = 0;
		for (let j = 0; j < n; j++) {
			const e = Math.exp(x[off + j] - max);
			x[off + j] = e;
			sum += e;
		}
		for (let j = 0; j < n; j++) {
			x[off + j] /= sum;
		}
	}
}

export function convOutputLength(nIn: number, kernel: number, stride: number): number {
	return nIn < kernel ? 0 : Math.floor((nIn - kernel) / stride) + 1;
}

/** Strided valid convolution of time-major input (tIn, cIn) with kernels
 * (cOut, kernel, cIn) flattened row-major. Output is (tOut, cOut). Patches
 * are gathered chunk by chunk so large inputs stay within a few MB. */
export function conv1d(
	x: Float32Array,
	tIn: number,
	cIn: number,
	weight: Float32Array,
	cOut: number,
	kernel: number,
	stride: number,
): Float32Array {
	const tOut = convOutputLength(tIn, kernel, stride);
	const patchLen = kernel * cIn;
	const out = new Float32Array(tOut * cOut);
	const chunk = Math.max(1, Math.min(tOut, Math.floor(262144 / patchLen) + 1));
	const patches = new Float32Array(chunk * patchLen);

	// weight (cOut, patchLen) -> (patchLen, cOut) once, so each chunk is a
	// plain row-major matmul
	const wt = new Float32Array(patchLen * cOut);
	for (let o = 0; o < cOut; o++) {
		for (let p = 0; p < patchLen; p++) {
			wt[p * cOut + o] = weight[o * patchLen + p];
		}
	}

	for (let t0 = 0; t0 < tOut; t0 += chunk) {
		const rows = Math.min(chunk, tOut - t0);
		for (let r = 0; r < rows; r++) {
			const start = (t0 + r) * stride * cIn;
			patches.set(x.subarray(start, start + patchLen), r * patchLen);
		}
		const partial = matmul(
			rows === chunk ? patches : patches.subarray(0, rows * patchLen),
			wt,
			rows,
			patchLen,
			cOut,
		);
		out.set(partial, t0 * cOut);
	}
	return out;
}
