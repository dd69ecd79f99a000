"""Denoiser backends: the weight-free gaussian mock and the SVD adapter.

A backend is ``backend(x_t, sigma, session) -> x0_hat`` where ``session``
carries the INIT metadata and condition payload. The gaussian mock must
evaluate exactly ``(sigma^2 * mean + scale^2 * x_t) / (sigma^2 + scale^2)``
in that grouping (float32 array, float scalars): that expression is the wire
contract that makes a refine run through this server bitwise-equal to the
client's in-process oracle.
"""

from __future__ import annotations


def gaussian_mock(mean: float = 0.0, scale: float = 1.0):
    def predict(x_t, sigma, session=None):
        sg2 = float(sigma) * float(sigma)
        s2 = float(scale) * float(scale)
        return (sg2 * mean + s2 * x_t) / (sg2 + s2)

    return predict


class SvdBackend:
    """Image-to-video latent diffusion model behind the Predict contract.

    Wraps the ``xt-1-1`` video diffusion pipeline: the conditioning image
    arrives in INIT (PPM bytes), PREDICT latents are denoised with the
    model's own preconditioning (sigma_data = 1: skip 1/(s^2+1), out
    -s/sqrt(s^2+1), in 1/sqrt(s^2+1), noise 0.25 log s) and its default
    frame-ramped classifier-free guidance. Conditioning noise augmentation
    is forced to the INIT value (0 by default). Requires torch + diffusers
    and locally available weights; construction fails with a clear message
    otherwise.
    """

    DEFAULT_MODEL = "stabilityai/stable-video-diffusion-img2vid-xt-1-1"

    def __init__(self, model_id: str | None = None, device: str = "cuda"):
        try:
            import torch
            from diffusers import StableVideoDiffusionPipeline
        except ImportError as exc:
            raise RuntimeError(
                "the real-model backend needs the 'svd' extra "
                "(pip install 'viewx-server[svd]') and local weights"
            ) from exc
        self._torch = torch
        self.device = device
        dtype = torch.float16 if device.startswith("cuda") else torch.float32
        self.pipe = StableVideoDiffusionPipeline.from_pretrained(
            model_id or self.DEFAULT_MODEL, torch_dtype=dtype
        ).to(device)
        self.pipe.vae.eval()
        self.pipe.unet.eval()
        self._session_state = None

    def prepare(self, session):
        """Encode the INIT conditioning once per session."""
        import io

        import numpy as np
        from PIL import Image

        torch = self._torch
        image = Image.open(io.BytesIO(session.condition)).convert("RGB")
        meta = session.meta
        frames = int(meta["shape"][0])
        fps = int(meta.get("fps", 6))
        aug = float(meta.get("noise_aug_strength", 0.0))

        with torch.no_grad():
            embeddings = self.pipe._encode_image(image, self.device, 1, True)
            tensor_image = self.pipe.video_processor.preprocess(image).to(
                self.device, dtype=self.pipe.vae.dtype
            )
            if aug > 0:
                tensor_image = tensor_image + aug * torch.randn_like(tensor_image)
            cond_latent = self.pipe.vae.encode(tensor_image).latent_dist.mode()
            cond_latents = cond_latent.unsqueeze(1).repeat(1, frames, 1, 1, 1)
            cond_latents = torch.cat([torch.zeros_like(cond_latents), cond_latents])
            added_time_ids = self.pipe._get_add_time_ids(
                fps - 1, 127, aug, embeddings.dtype, 1, 1, True
            ).to(self.device)
        self._session_state = (embeddings, cond_latents, added_time_ids, frames)

    def __call__(self, x_t, sigma, session=None):
        import numpy as np

        torch = self._torch
        if self._session_state is None:
            self.prepare(session)
        embeddings, cond_latents, added_time_ids, frames = self._session_state

        guidance = torch.linspace(1.0, 3.0, frames).to(self.device)[None, :, None, None, None]
        sg = float(sigma)
        c_in = 1.0 / (sg * sg + 1.0) ** 0.5
        c_skip = 1.0 / (sg * sg + 1.0)
        c_out = -sg * c_in
        c_noise = 0.25 * float(np.log(sg))

        latents = torch.from_numpy(np.ascontiguousarray(x_t)).to(
            self.device, dtype=self.pipe.unet.dtype
        )[None]
        with torch.no_grad():
            model_in = torch.cat([latents * c_in] * 2)
            model_in = torch.cat([model_in, cond_latents], dim=2)
            timestep = torch.tensor([c_noise], device=self.device)
            noise_pred = self.pipe.unet(
                model_in,
                timestep,
                encoder_hidden_states=embeddings,
                added_time_ids=added_time_ids,
                return_dict=False,
            )[0]
            uncond, cond = noise_pred.chunk(2)
            noise_pred = uncond + guidance * (cond - uncond)
            denoised = latents * c_skip + noise_pred * c_out
        return denoised[0].float().cpu().numpy()
