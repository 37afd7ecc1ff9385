// Canvas rendering: the 64x64 frames are upscaled by an integer factor with
// nearest-neighbor sampling so pixels stay crisp.

export const MIN_SCALE = 4;

export function integerScale(frameSize: number, available: number): number {
  return Math.max(MIN_SCALE, Math.floor(available / frameSize));
}

export class FrameRenderer {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement, private scale: number = 8) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    this.ctx.imageSmoothingEnabled = false; // nearest-neighbor
  }

  drawPngBase64(pngBase64: string): Promise<void> {
    return new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => {
        this.canvas.width = img.width * this.scale;
        this.canvas.height = img.height * this.scale;
        this.ctx.imageSmoothingEnabled = false;
        this.ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
        resolve();
      };
      img.onerror = () => reject(new Error("frame decode failed"));
      img.src = `data:image/png;base64,${pngBase64}`;
    });
  }
}
